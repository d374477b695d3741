use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::account::{Account, CustodyModel, KeyOperatorEvidence, PartyRef, SuspectList};
use super::messages::{
    AckDecision, AckEnvelope, BatchEntry, BeneficiaryEvidence, BeneficiaryRef, NoticeEnvelope, PartyEvidence,
    RejectReason, TransferAck, TransferNotice, TransferTarget,
};
use super::records::{
    audit, reconcile, AuditReport, CertRole, DenyReason, ReconciliationReport, RecordStatus, Role, TravelRuleRecord,
};
use super::VaspError;
use crate::assertion::{filter_attributes, issue_assertion, verify_assertion, AssertionSigner, DisclosurePolicy};
use crate::ca::{
    Attributes, CertClass, Certificate, CertificateAuthority, CertificateProfile, CertificateStatus, MergeSummary,
    RevocationList, RevocationView, TrustAnchors, UsagePolicy, Validator, Validity,
};
use crate::chain::{ChainTransaction, ConfirmationEvent, Ledger, UnsignedTransaction};
use crate::crypto::{generate_keypair, Hash32, KeyPair, PublicKey, Signature};
use crate::events::{Event, TransferId};
use crate::message::Payload;
use crate::network::{
    route_query, DeltaOutcome, DirectoryDelta, DirectoryEntry, DirectoryReplica, DirectorySnapshot, GossipItem,
    PeeringLink, TrustNetwork,
};
use crate::Tick;

pub const DEFAULT_CHAIN_LABEL: &str = "simchain";

/// Per-node policy knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub ack_timeout: Tick,
    pub chain_label: String,
    pub disclosure: DisclosurePolicy,
    pub minimum_class: CertClass,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            ack_timeout: 10,
            chain_label: DEFAULT_CHAIN_LABEL.to_string(),
            disclosure: DisclosurePolicy::travel_rule(),
            minimum_class: CertClass::Class1,
        }
    }
}

/// What a node can reach while it handles one step. Everything except the
/// acting node itself.
pub struct NodeContext<'a> {
    pub now: Tick,
    pub cas: &'a BTreeMap<String, CertificateAuthority>,
    pub peers: &'a BTreeMap<String, VaspNode>,
    pub networks: &'a BTreeMap<String, TrustNetwork>,
    pub links: &'a [PeeringLink],
    pub link_up: &'a dyn Fn(usize) -> bool,
    pub node_up: &'a dyn Fn(&str) -> bool,
    pub suspects: &'a SuspectList,
    pub ledger: &'a mut Ledger,
    pub outbox: &'a mut Vec<(String, Payload)>,
    pub events: &'a mut Vec<Event>,
}

impl NodeContext<'_> {
    fn send(&mut self, to: &str, payload: Payload) {
        self.outbox.push((to.to_string(), payload));
    }

    fn log(&mut self, event: Event) {
        self.events.push(event);
    }
}

/// Answer of the VASP owning a customer, to a direct query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryAnswer {
    Found { certificate: Certificate, account_id: String, vasp_certificate: Certificate },
    /// The owner knows the certificate is no longer good.
    Invalid { certificate: Certificate, account_id: String, vasp_certificate: Certificate },
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolutionSource {
    Local,
    AffiliatedCa,
    Directory,
    CrossNetwork,
    DirectInquiry,
}

impl ResolutionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ResolutionSource::Local => "local",
            ResolutionSource::AffiliatedCa => "affiliated_ca",
            ResolutionSource::Directory => "directory",
            ResolutionSource::CrossNetwork => "cross_network",
            ResolutionSource::DirectInquiry => "direct_inquiry",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedBeneficiary {
    /// The beneficiary's certificate; the VASP's own for commingled
    /// accounts.
    pub certificate: Certificate,
    pub attributes: Option<Attributes>,
    pub home_vasp_id: String,
    pub beneficiary_vasp_certificate: Certificate,
    pub account_id: Option<String>,
    pub source: ResolutionSource,
    pub resolution_path: Vec<String>,
}

impl ResolvedBeneficiary {
    pub fn beneficiary_ref(&self) -> BeneficiaryRef {
        BeneficiaryRef { public_key_hash: self.certificate.key_hash(), account_id: self.account_id.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unresolved {
    pub partial_path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferRequest {
    pub originator_account: String,
    pub target: TransferTarget,
    pub amount: u64,
    pub asset_type: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferOutcome {
    /// Notice sent; the result arrives with the ack and the chain.
    Pending(TransferId),
    Denied(TransferId, DenyReason),
}

impl TransferOutcome {
    pub fn transfer_id(&self) -> TransferId {
        match self {
            TransferOutcome::Pending(id) | TransferOutcome::Denied(id, _) => *id,
        }
    }
}

#[derive(Debug, Clone)]
struct PendingTransfer {
    tx: UnsignedTransaction,
    signer_account: Option<String>,
    beneficiary_vasp_certificate: Certificate,
    sent_at: Tick,
}

#[derive(Debug, Clone)]
pub struct VaspNode {
    id: String,
    keypair: KeyPair,
    certificate: Certificate,
    config: NodeConfig,
    rng: ChaCha8Rng,
    anchors: TrustAnchors,
    revocations: RevocationView,
    networks: Vec<String>,
    replicas: BTreeMap<String, DirectoryReplica>,
    accounts: BTreeMap<String, Account>,
    by_key_hash: BTreeMap<Hash32, String>,
    wallets: BTreeMap<String, KeyPair>,
    records: BTreeMap<(Role, TransferId), TravelRuleRecord>,
    pending: BTreeMap<TransferId, PendingTransfer>,
    agreements: u64,
}

impl VaspNode {
    /// A node holding the VASP certificate `certificate` for `keypair`,
    /// trusting `affiliated_ca_root`.
    pub fn new(
        keypair: KeyPair,
        certificate: Certificate,
        affiliated_ca_root: Certificate,
        config: NodeConfig,
        rng_seed: u64,
    ) -> Result<Self, VaspError> {
        if certificate.subject_public_key != keypair.public_key() {
            return Err(VaspError::WalletMismatch);
        }
        Ok(Self {
            id: certificate.subject_id.clone(),
            keypair,
            certificate,
            config,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            anchors: TrustAnchors::from_iter([affiliated_ca_root]),
            revocations: RevocationView::new(),
            networks: Vec::new(),
            replicas: BTreeMap::new(),
            accounts: BTreeMap::new(),
            by_key_hash: BTreeMap::new(),
            wallets: BTreeMap::new(),
            records: BTreeMap::new(),
            pending: BTreeMap::new(),
            agreements: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public_key()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.keypair.sign(message)
    }

    pub(crate) fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: NodeConfig) {
        self.config = config;
    }

    pub fn anchors(&self) -> &TrustAnchors {
        &self.anchors
    }

    pub fn revocations(&self) -> &RevocationView {
        &self.revocations
    }

    pub fn networks(&self) -> &[String] {
        &self.networks
    }

    pub fn replica(&self, network: &str) -> Option<&DirectoryReplica> {
        self.replicas.get(network)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn account(&self, account_id: &str) -> Option<&Account> {
        self.accounts.get(account_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &TravelRuleRecord> + Clone {
        self.records.values()
    }

    pub fn record(&self, role: Role, id: &TransferId) -> Option<&TravelRuleRecord> {
        self.records.get(&(role, *id))
    }

    /// Test hook for audit fixtures.
    pub fn record_mut(&mut self, role: Role, id: &TransferId) -> Option<&mut TravelRuleRecord> {
        self.records.get_mut(&(role, *id))
    }

    /// Our VASP key plus every customer key we hold or relay for.
    pub fn known_keys(&self) -> BTreeSet<PublicKey> {
        let mut keys: BTreeSet<PublicKey> = self.accounts.values().filter_map(|a| a.customer_public_key).collect();
        keys.insert(self.public_key());
        keys
    }

    /// Records membership of `network`, adding the CAs it recognizes.
    pub fn joined(&mut self, network: &TrustNetwork) {
        for id in network.recognized_cas().ids() {
            if let Some(root) = network.recognized_cas().get(id) {
                self.anchors.add(root.clone());
            }
        }
        if !self.networks.iter().any(|n| n == network.id()) {
            self.networks.push(network.id().to_string());
            self.networks.sort();
        }
        self.replicas.entry(network.id().to_string()).or_insert_with(|| DirectoryReplica::new(self.id.clone()));
    }

    fn fresh_id(&mut self) -> [u8; 16] {
        self.rng.random()
    }

    fn usage_policy(&self) -> UsagePolicy {
        UsagePolicy { chain: Some(self.config.chain_label.clone()), minimum_class: Some(self.config.minimum_class) }
    }

    // ---- accounts -------------------------------------------------------

    pub fn open_account(
        &mut self,
        account_id: &str,
        subject_id: &str,
        attributes: Attributes,
        custody_model: CustodyModel,
        customer_public_key: Option<PublicKey>,
        now: Tick,
    ) -> Result<&Account, VaspError> {
        if self.accounts.contains_key(account_id) {
            return Err(VaspError::DuplicateAccount(account_id.to_string()));
        }
        let (public_key, private_key, operator) = match (custody_model, customer_public_key) {
            (CustodyModel::Mediated, Some(pk)) => (Some(pk), None, None),
            (CustodyModel::KeyCustody, None) => {
                let seed: [u8; 32] = self.rng.random();
                let key = generate_keypair(&seed).expect("32-byte seed");
                self.agreements += 1;
                let operator = KeyOperatorEvidence {
                    operator_vasp_id: self.id.clone(),
                    custody_agreement_id: format!("{}-custody-{}", self.id, self.agreements),
                    since_tick: now,
                };
                (Some(key.public_key()), Some(key), Some(operator))
            }
            (CustodyModel::Commingled, None) => (None, None, None),
            _ => return Err(VaspError::ModelKeyMismatch(custody_model)),
        };
        let on_chain_key = public_key.unwrap_or_else(|| self.public_key());
        let mut attributes = attributes;
        attributes.insert("account_id".into(), account_id.to_string());
        attributes.insert("vasp_id".into(), self.id.clone());
        attributes.insert("custody_model".into(), custody_model.to_string());
        attributes.insert("public_key_hash".into(), on_chain_key.key_hash().to_hex());
        let commingled = custody_model == CustodyModel::Commingled;
        let account = Account {
            account_id: account_id.to_string(),
            subject_id: subject_id.to_string(),
            attributes,
            custody_model,
            customer_public_key: public_key,
            custodied_private_key: private_key,
            certificate: commingled.then(|| self.certificate.clone()),
            key_ownership_evidence: commingled.then(|| self.certificate.digest()),
            key_operator_evidence: operator,
        };
        if let Some(pk) = public_key {
            self.by_key_hash.insert(pk.key_hash(), account_id.to_string());
        }
        self.accounts.insert(account_id.to_string(), account);
        Ok(&self.accounts[account_id])
    }

    /// Puts the customer's wallet next to the node so mediated transfers
    /// can be signed.
    pub fn pair_wallet(&mut self, account_id: &str, wallet: KeyPair) -> Result<(), VaspError> {
        let account = self.accounts.get(account_id).ok_or_else(|| VaspError::UnknownAccount(account_id.into()))?;
        if account.custody_model != CustodyModel::Mediated || account.customer_public_key != Some(wallet.public_key())
        {
            return Err(VaspError::WalletMismatch);
        }
        self.wallets.insert(account_id.to_string(), wallet);
        Ok(())
    }

    pub fn enroll_customer_certificate(
        &mut self,
        account_id: &str,
        ca: &mut CertificateAuthority,
        requested_class: CertClass,
        profile: CertificateProfile,
        validity: Validity,
        now: Tick,
    ) -> Result<Certificate, VaspError> {
        let account = self.accounts.get(account_id).ok_or_else(|| VaspError::UnknownAccount(account_id.into()))?;
        let Some(public_key) = account.customer_public_key else {
            return Err(VaspError::NoCustomerKey);
        };
        let registration = ca.register_subject(&account.subject_id, &account.attributes, requested_class, now)?;
        let certificate = ca.issue_certificate(&registration, public_key, profile, validity, now)?;
        let account = self.accounts.get_mut(account_id).expect("checked above");
        account.key_ownership_evidence = Some(certificate.digest());
        account.certificate = Some(certificate.clone());
        Ok(certificate)
    }

    // ---- queries answered for others -----------------------------------

    fn status_good(&self, cert: &Certificate, cas: &BTreeMap<String, CertificateAuthority>, now: Tick) -> bool {
        if self.revocations.is_revoked(&cert.issuer_id, &cert.serial).is_some() {
            return false;
        }
        let Some(ca) = cas.get(&cert.issuer_id) else {
            return true;
        };
        let Some(root) = self.anchors.get(&cert.issuer_id) else {
            return false;
        };
        let response = ca.check_status(&cert.serial, now);
        response.verify(&root.subject_public_key) && response.status == CertificateStatus::Good
    }

    fn answer_for(&self, account: &Account, cas: &BTreeMap<String, CertificateAuthority>, now: Tick) -> QueryAnswer {
        let Some(certificate) = account.certificate.clone() else {
            return QueryAnswer::NotFound;
        };
        let account_id = account.account_id.clone();
        let vasp_certificate = self.certificate.clone();
        if certificate.validity.contains(now) && self.status_good(&certificate, cas, now) {
            QueryAnswer::Found { certificate, account_id, vasp_certificate }
        } else {
            QueryAnswer::Invalid { certificate, account_id, vasp_certificate }
        }
    }

    pub fn answer_query(&self, key_hash: &Hash32, cas: &BTreeMap<String, CertificateAuthority>, now: Tick) -> QueryAnswer {
        match self.by_key_hash.get(key_hash).and_then(|id| self.accounts.get(id)) {
            Some(account) => self.answer_for(account, cas, now),
            None => QueryAnswer::NotFound,
        }
    }

    pub fn answer_account(&self, account_id: &str, cas: &BTreeMap<String, CertificateAuthority>, now: Tick) -> QueryAnswer {
        match self.accounts.get(account_id) {
            Some(account) => self.answer_for(account, cas, now),
            None => QueryAnswer::NotFound,
        }
    }

    // ---- resolution -----------------------------------------------------

    fn local_resolution(&self, account: &Account) -> Option<ResolvedBeneficiary> {
        Some(ResolvedBeneficiary {
            certificate: account.certificate.clone()?,
            attributes: Some(account.attributes.clone()),
            home_vasp_id: self.id.clone(),
            beneficiary_vasp_certificate: self.certificate.clone(),
            account_id: Some(account.account_id.clone()),
            source: ResolutionSource::Local,
            resolution_path: vec![self.id.clone()],
        })
    }

    fn vasp_certificate_of(&self, vasp_id: &str, ctx: &NodeContext<'_>) -> Option<Certificate> {
        if vasp_id == self.id {
            return Some(self.certificate.clone());
        }
        ctx.networks
            .values()
            .find_map(|n| n.member(vasp_id).map(|m| m.vasp_certificate.clone()))
            .or_else(|| ctx.peers.get(vasp_id).map(|p| p.certificate.clone()))
    }

    fn from_answer(
        answer: QueryAnswer,
        source: ResolutionSource,
        resolution_path: Vec<String>,
    ) -> Option<(ResolvedBeneficiary, bool)> {
        let (certificate, account_id, vasp_certificate, good) = match answer {
            QueryAnswer::Found { certificate, account_id, vasp_certificate } => {
                (certificate, account_id, vasp_certificate, true)
            }
            QueryAnswer::Invalid { certificate, account_id, vasp_certificate } => {
                (certificate, account_id, vasp_certificate, false)
            }
            QueryAnswer::NotFound => return None,
        };
        Some((
            ResolvedBeneficiary {
                certificate,
                attributes: None,
                home_vasp_id: vasp_certificate.subject_id.clone(),
                beneficiary_vasp_certificate: vasp_certificate,
                account_id: Some(account_id),
                source,
                resolution_path,
            },
            good,
        ))
    }

    /// Local accounts, then the affiliated CA (public keys only), then the
    /// trust-network directories, then routes into other networks.
    pub fn resolve_beneficiary(
        &mut self,
        target: &TransferTarget,
        ctx: &mut NodeContext<'_>,
    ) -> Result<ResolvedBeneficiary, Unresolved> {
        let now = ctx.now;
        let hash = match target {
            TransferTarget::Account { vasp_id, account_id } => {
                if *vasp_id == self.id {
                    return self
                        .accounts
                        .get(account_id)
                        .and_then(|a| self.local_resolution(a))
                        .ok_or(Unresolved { partial_path: vec![self.id.clone()] });
                }
                let path = vec![self.id.clone(), vasp_id.clone()];
                let answer = match ctx.peers.get(vasp_id) {
                    Some(peer) if (ctx.node_up)(vasp_id) => peer.answer_account(account_id, ctx.cas, now),
                    _ => QueryAnswer::NotFound,
                };
                return Self::from_answer(answer, ResolutionSource::DirectInquiry, path.clone())
                    .map(|(r, _)| r)
                    .ok_or(Unresolved { partial_path: path });
            }
            TransferTarget::PublicKey(pk) => pk.key_hash(),
            TransferTarget::KeyHash(h) => *h,
        };

        if let Some(resolved) =
            self.by_key_hash.get(&hash).and_then(|id| self.accounts.get(id)).and_then(|a| self.local_resolution(a))
        {
            return Ok(resolved);
        }

        if let TransferTarget::PublicKey(pk) = target {
            let ca_id = self.certificate.issuer_id.clone();
            if let (Some(ca), Some(root)) = (ctx.cas.get(&ca_id), self.anchors.get(&ca_id)) {
                if let Some(lookup) = ca.find_certificate_by_pubkey(pk, now) {
                    let home = lookup.attributes.get("vasp_id").cloned();
                    let vasp_cert = home.as_deref().and_then(|h| self.vasp_certificate_of(h, ctx));
                    if lookup.verify(&root.subject_public_key) {
                        if let (Some(home), Some(vasp_cert)) = (home, vasp_cert) {
                            return Ok(ResolvedBeneficiary {
                                certificate: lookup.certificate.clone(),
                                account_id: lookup.attributes.get("account_id").cloned(),
                                attributes: Some(lookup.attributes),
                                home_vasp_id: home,
                                beneficiary_vasp_certificate: vasp_cert,
                                source: ResolutionSource::AffiliatedCa,
                                resolution_path: vec![self.id.clone(), ca_id],
                            });
                        }
                    }
                }
            }
        }

        for network in self.networks.clone() {
            let hit = self.replicas.get(&network).and_then(|r| r.lookup(&hash)).map(|(p, e)| (p.to_string(), e.clone()));
            let Some((publisher, entry)) = hit else { continue };
            let answer = match ctx.peers.get(&publisher) {
                Some(peer) if (ctx.node_up)(&publisher) => peer.answer_query(&hash, ctx.cas, now),
                _ => QueryAnswer::NotFound,
            };
            let path = vec![self.id.clone(), publisher.clone()];
            match Self::from_answer(answer, ResolutionSource::Directory, path) {
                Some((resolved, good)) => {
                    if !good {
                        if let Some(r) = self.replicas.get_mut(&network) {
                            r.mark_stale(&publisher, entry.certificate_serial);
                        }
                    }
                    return Ok(resolved);
                }
                None => ctx.log(Event::DirectoryInconsistency { publisher, key_hash: hash }),
            }
        }

        let mut partial = vec![self.id.clone()];
        for network in self.networks.clone() {
            let routed = route_query(|n| ctx.networks.get(n).map(|t| t.routes()), ctx.links, &network, &self.id, &hash, ctx.link_up, ctx.node_up);
            match routed {
                Ok(path) => {
                    let origin = path.network_path.last().cloned().unwrap_or_default();
                    let entry_gateway = path.hops.last().cloned().unwrap_or_default();
                    let Some(gateway) = ctx.peers.get(&entry_gateway) else { continue };
                    let owner = gateway
                        .replica(&origin)
                        .and_then(|r| r.lookup(&hash))
                        .map(|(p, _)| p.to_string());
                    let Some(owner) = owner else {
                        partial = path.hops;
                        continue;
                    };
                    let mut hops = path.hops.clone();
                    if owner != entry_gateway {
                        hops.push(owner.clone());
                    }
                    let answer = match ctx.peers.get(&owner) {
                        Some(peer) if (ctx.node_up)(&owner) => peer.answer_query(&hash, ctx.cas, now),
                        _ => QueryAnswer::NotFound,
                    };
                    match Self::from_answer(answer, ResolutionSource::CrossNetwork, hops.clone()) {
                        Some((resolved, _)) => return Ok(resolved),
                        None => partial = hops,
                    }
                }
                Err(path) => {
                    if path.hops.len() > partial.len() {
                        partial = path.hops;
                    }
                }
            }
        }
        Err(Unresolved { partial_path: partial })
    }

    // ---- originating transfers -----------------------------------------

    fn validator<'a>(&'a self, policy: &'a UsagePolicy, now: Tick) -> Validator<'a> {
        Validator { anchors: &self.anchors, revocations: &self.revocations, policy, now }
    }

    fn cert_ok(&self, cert: &Certificate, ctx: &NodeContext<'_>, policy: &UsagePolicy) -> bool {
        self.validator(policy, ctx.now).validate(cert).is_valid() && self.status_good(cert, ctx.cas, ctx.now)
    }

    fn party_refs(account: &Account) -> Vec<PartyRef> {
        let mut refs = vec![PartyRef::Account(account.account_id.clone())];
        if let Some(pk) = account.customer_public_key {
            refs.push(PartyRef::KeyHash(pk.key_hash()));
        }
        refs
    }

    fn target_refs(target: &TransferTarget) -> Vec<PartyRef> {
        match target {
            TransferTarget::PublicKey(pk) => vec![PartyRef::KeyHash(pk.key_hash())],
            TransferTarget::KeyHash(h) => vec![PartyRef::KeyHash(*h)],
            TransferTarget::Account { account_id, .. } => vec![PartyRef::Account(account_id.clone())],
        }
    }

    fn evidence_for(&self, account: &Account) -> Option<PartyEvidence> {
        Some(PartyEvidence {
            custody_model: account.custody_model,
            certificate: account.certificate.clone()?,
            key_ownership: account.key_ownership_evidence,
            key_operator: account.key_operator_evidence.clone(),
        })
    }

    /// Signed assertion about `account`, cut down to the disclosure policy.
    fn disclose(&mut self, account_id: &str, ctx: &NodeContext<'_>) -> Option<crate::assertion::AttributeAssertion> {
        let policy = self.usage_policy();
        let (full_id, cut_id) = (self.fresh_id(), self.fresh_id());
        let account = self.accounts.get(account_id)?;
        let cert = account.certificate.as_ref()?;
        let signer = AssertionSigner { vasp_id: &self.id, key: &self.keypair };
        let validator = self.validator(&policy, ctx.now);
        let full = issue_assertion(
            signer,
            &account.subject_id,
            cert,
            &account.attributes,
            &account.attributes,
            &validator,
            full_id,
            ctx.now,
        )
        .ok()?;
        filter_attributes(&full, &self.config.disclosure, signer, cut_id, ctx.now).ok()
    }

    /// One customer transfer. Commingled accounts go through the batch path
    /// with a single entry.
    pub fn initiate_transfer(&mut self, request: TransferRequest, ctx: &mut NodeContext<'_>) -> TransferOutcome {
        self.initiate(vec![request], ctx)
    }

    /// Several commingled transfers folded into one on-chain transaction.
    pub fn initiate_batch(&mut self, requests: Vec<TransferRequest>, ctx: &mut NodeContext<'_>) -> TransferOutcome {
        self.initiate(requests, ctx)
    }

    fn initiate(&mut self, requests: Vec<TransferRequest>, ctx: &mut NodeContext<'_>) -> TransferOutcome {
        let transfer_id = self.fresh_id();
        let total = requests.iter().fold(0u64, |acc, r| acc.saturating_add(r.amount));
        ctx.log(Event::TransferRequested { transfer_id, entries: requests.len(), amount: total });
        match self.prepare(transfer_id, &requests, ctx) {
            Ok(()) => TransferOutcome::Pending(transfer_id),
            Err(reason) => {
                ctx.log(Event::TransferDenied { transfer_id, reason });
                TransferOutcome::Denied(transfer_id, reason)
            }
        }
    }

    fn prepare(
        &mut self,
        transfer_id: TransferId,
        requests: &[TransferRequest],
        ctx: &mut NodeContext<'_>,
    ) -> Result<(), DenyReason> {
        let first = requests.first().ok_or(DenyReason::InvalidAmount)?;
        if requests.iter().any(|r| r.amount == 0) {
            return Err(DenyReason::InvalidAmount);
        }
        let mut accounts = Vec::with_capacity(requests.len());
        for r in requests {
            accounts.push(self.accounts.get(&r.originator_account).cloned().ok_or(DenyReason::UnknownAccount)?);
        }
        let commingled = accounts[0].custody_model == CustodyModel::Commingled;
        if requests.len() > 1 && !accounts.iter().all(|a| a.custody_model == CustodyModel::Commingled) {
            return Err(DenyReason::MixedDestination);
        }
        for (r, a) in requests.iter().zip(&accounts) {
            let mut refs = Self::party_refs(a);
            refs.extend(Self::target_refs(&r.target));
            if !ctx.suspects.screen(&refs) {
                return Err(DenyReason::SuspectParty);
            }
            if a.certificate.is_none() {
                return Err(DenyReason::NoOriginatorCert);
            }
        }

        let mut resolved = Vec::with_capacity(requests.len());
        for r in requests {
            match self.resolve_beneficiary(&r.target, ctx) {
                Ok(b) => {
                    ctx.log(Event::BeneficiaryResolved {
                        transfer_id,
                        home_vasp: b.home_vasp_id.clone(),
                        source: b.source.as_str().to_string(),
                        path: b.resolution_path.clone(),
                    });
                    resolved.push(b);
                }
                Err(u) => {
                    ctx.log(Event::ResolutionFailed { transfer_id, partial_path: u.partial_path });
                    return Err(DenyReason::BeneficiaryUnresolved);
                }
            }
        }
        let home = resolved[0].home_vasp_id.clone();
        if resolved.iter().any(|b| b.home_vasp_id != home) {
            return Err(DenyReason::MixedDestination);
        }
        for b in &resolved {
            let mut refs = vec![PartyRef::KeyHash(b.certificate.key_hash())];
            refs.extend(b.account_id.clone().map(PartyRef::Account));
            if !ctx.suspects.screen(&refs) {
                return Err(DenyReason::SuspectParty);
            }
        }

        let policy = self.usage_policy();
        for a in &accounts {
            let cert = a.certificate.as_ref().expect("checked above");
            if !self.cert_ok(cert, ctx, &policy) {
                return Err(DenyReason::CertInvalid(CertRole::OriginatorCustomer));
            }
        }
        if !self.cert_ok(&self.certificate, ctx, &policy) {
            return Err(DenyReason::CertInvalid(CertRole::OriginatorVasp));
        }
        let beneficiary_vasp = resolved[0].beneficiary_vasp_certificate.clone();
        if beneficiary_vasp.subject_id != home || !self.cert_ok(&beneficiary_vasp, ctx, &policy) {
            return Err(DenyReason::CertInvalid(CertRole::BeneficiaryVasp));
        }
        for b in &resolved {
            if !self.cert_ok(&b.certificate, ctx, &policy) {
                return Err(DenyReason::CertInvalid(CertRole::Beneficiary));
            }
        }

        let notice = if commingled {
            self.build_commingled_batch(transfer_id, requests, &resolved, &beneficiary_vasp, &first.asset_type, ctx)?
        } else {
            let account = &accounts[0];
            let assertion = self
                .disclose(&account.account_id, ctx)
                .ok_or(DenyReason::CertInvalid(CertRole::OriginatorCustomer))?;
            let from = account.customer_public_key.ok_or(DenyReason::KeyUnavailable)?;
            let tx = UnsignedTransaction {
                from_public_key: from,
                to_public_key: resolved[0].certificate.subject_public_key,
                amount: first.amount,
                asset_type: first.asset_type.clone(),
                nonce: self.rng.random(),
            };
            let notice = TransferNotice {
                notice_id: transfer_id,
                originator_vasp_id: self.id.clone(),
                beneficiary_vasp_id: home.clone(),
                originator_assertion: Some(assertion),
                originator_evidence: self.evidence_for(account),
                beneficiary_ref: resolved[0].beneficiary_ref(),
                asset_type: first.asset_type.clone(),
                amount: first.amount,
                execution_tick: ctx.now,
                intended_chain_tx_binding: tx.tx_id(),
                batch_entries: None,
                originator_vasp_signature: Signature([0; 64]),
            };
            self.pending.insert(
                transfer_id,
                PendingTransfer {
                    tx,
                    signer_account: Some(account.account_id.clone()),
                    beneficiary_vasp_certificate: beneficiary_vasp.clone(),
                    sent_at: ctx.now,
                },
            );
            notice
        };
        let mut notice = notice;
        notice.sign(&self.keypair);
        let binding = notice.intended_chain_tx_binding;
        self.records.insert(
            (Role::OriginatorSide, transfer_id),
            TravelRuleRecord {
                record_id: transfer_id,
                role: Role::OriginatorSide,
                notice: notice.clone(),
                ack: None,
                chain_tx_id: None,
                status: RecordStatus::PendingAck,
                created_at: ctx.now,
                updated_at: ctx.now,
            },
        );
        let envelope = NoticeEnvelope { notice, originator_vasp_certificate: self.certificate.clone() };
        ctx.send(&home, Payload::Notice(Box::new(envelope)));
        ctx.log(Event::NoticeSent { transfer_id, to: home, binding });
        Ok(())
    }

    /// Builds the batch notice and registers the single VASP-key transaction
    /// it commits to. Every entry must be a commingled account of ours and
    /// every beneficiary must sit at the same VASP.
    pub fn build_commingled_batch(
        &mut self,
        transfer_id: TransferId,
        requests: &[TransferRequest],
        resolved: &[ResolvedBeneficiary],
        beneficiary_vasp: &Certificate,
        asset_type: &str,
        ctx: &NodeContext<'_>,
    ) -> Result<TransferNotice, DenyReason> {
        if requests.is_empty() || requests.len() != resolved.len() {
            return Err(DenyReason::InvalidAmount);
        }
        if resolved.iter().any(|b| b.home_vasp_id != beneficiary_vasp.subject_id)
            || requests.iter().any(|r| r.asset_type != asset_type)
        {
            return Err(DenyReason::MixedDestination);
        }
        let mut entries = Vec::with_capacity(requests.len());
        let mut total: u64 = 0;
        for (r, b) in requests.iter().zip(resolved) {
            let account = self.accounts.get(&r.originator_account).cloned().ok_or(DenyReason::UnknownAccount)?;
            if account.custody_model != CustodyModel::Commingled {
                return Err(DenyReason::MixedDestination);
            }
            let assertion = self
                .disclose(&account.account_id, ctx)
                .ok_or(DenyReason::CertInvalid(CertRole::OriginatorCustomer))?;
            total = total.checked_add(r.amount).ok_or(DenyReason::InvalidAmount)?;
            entries.push(BatchEntry {
                beneficiary_ref: b.beneficiary_ref(),
                amount: r.amount,
                originator_assertion: assertion,
                originator_evidence: self.evidence_for(&account).ok_or(DenyReason::NoOriginatorCert)?,
            });
        }
        let tx = UnsignedTransaction {
            from_public_key: self.public_key(),
            to_public_key: beneficiary_vasp.subject_public_key,
            amount: total,
            asset_type: asset_type.to_string(),
            nonce: self.rng.random(),
        };
        let notice = TransferNotice {
            notice_id: transfer_id,
            originator_vasp_id: self.id.clone(),
            beneficiary_vasp_id: beneficiary_vasp.subject_id.clone(),
            originator_assertion: None,
            originator_evidence: None,
            beneficiary_ref: BeneficiaryRef { public_key_hash: beneficiary_vasp.key_hash(), account_id: None },
            asset_type: asset_type.to_string(),
            amount: total,
            execution_tick: ctx.now,
            intended_chain_tx_binding: tx.tx_id(),
            batch_entries: Some(entries),
            originator_vasp_signature: Signature([0; 64]),
        };
        self.pending.insert(
            transfer_id,
            PendingTransfer {
                tx,
                signer_account: None,
                beneficiary_vasp_certificate: beneficiary_vasp.clone(),
                sent_at: ctx.now,
            },
        );
        Ok(notice)
    }

    // ---- messages --------------------------------------------------------

    pub fn handle_message(&mut self, from: &str, payload: Payload, ctx: &mut NodeContext<'_>) {
        match payload {
            Payload::Notice(env) => self.handle_transfer_notice(from, *env, ctx),
            Payload::Ack(env) => self.handle_ack(from, *env, ctx),
            Payload::Gossip { network, items } => self.handle_gossip(from, &network, &items, ctx),
            Payload::ResyncRequest { network, publisher } => {
                if let Some(snapshot) = self.replicas.get(&network).and_then(|r| r.snapshot_for(&publisher)) {
                    ctx.send(from, Payload::ResyncResponse { network, snapshot });
                }
            }
            Payload::ResyncResponse { network, snapshot } => {
                if let Some(r) = self.replicas.get_mut(&network) {
                    if r.apply_snapshot(&snapshot) {
                        r.note_neighbor_version(from, &snapshot.owner_vasp_id, snapshot.version);
                        r.purge_revoked(&self.revocations);
                        ctx.log(Event::GossipApplied {
                            network: network.clone(),
                            publisher: snapshot.owner_vasp_id.clone(),
                            version: snapshot.version,
                        });
                        self.relay(&network, ctx);
                    }
                }
            }
            Payload::CrlExchange { lists } => {
                let summary = self.ingest_revocations(&lists);
                let purged = self.purge_directories();
                ctx.log(Event::CrlMerged {
                    applied: summary.applied,
                    stale: summary.stale,
                    needs_base: summary.needs_base,
                    rejected: summary.rejected,
                    purged,
                });
            }
            // Route tables belong to the network and are updated by the
            // simulator.
            Payload::Advertisement { .. } => {}
        }
    }

    fn beneficiary_decision(
        &self,
        notice: &TransferNotice,
        originator_vasp: &Certificate,
        ctx: &NodeContext<'_>,
    ) -> Result<Vec<String>, RejectReason> {
        let policy = self.usage_policy();
        let validator = self.validator(&policy, ctx.now);
        if !self.cert_ok(originator_vasp, ctx, &policy) {
            return Err(RejectReason::CertInvalid);
        }
        if notice.beneficiary_vasp_id != self.id {
            return Err(RejectReason::UnknownBeneficiary);
        }
        if notice.amount == 0 || !notice.sum_holds() || notice.parties().iter().any(|p| p.amount == 0) {
            return Err(RejectReason::PolicyRefusal);
        }
        let mut account_ids = Vec::new();
        for party in notice.parties() {
            let r = party.beneficiary_ref;
            let account = match &r.account_id {
                Some(id) => self.accounts.get(id),
                None => self.by_key_hash.get(&r.public_key_hash).and_then(|id| self.accounts.get(id)),
            };
            let Some(account) = account else {
                return Err(RejectReason::UnknownBeneficiary);
            };
            if !ctx.suspects.screen(&Self::party_refs(account)) {
                return Err(RejectReason::SuspectParty);
            }
            let Some(cert) = account.certificate.as_ref() else {
                return Err(RejectReason::CertInvalid);
            };
            if cert.key_hash() != r.public_key_hash || !self.cert_ok(cert, ctx, &policy) {
                return Err(RejectReason::CertInvalid);
            }
            let (Some(assertion), Some(evidence)) = (party.originator_assertion, party.originator_evidence) else {
                return Err(RejectReason::PolicyRefusal);
            };
            if !self.cert_ok(&evidence.certificate, ctx, &policy)
                || !verify_assertion(assertion, originator_vasp, &evidence.certificate, &validator)
            {
                return Err(RejectReason::CertInvalid);
            }
            account_ids.push(account.account_id.clone());
        }
        // The on-chain recipient is the customer's key, or ours for batches.
        let expected = match &notice.batch_entries {
            Some(_) => self.public_key().key_hash(),
            None => notice.beneficiary_ref.public_key_hash,
        };
        if notice.beneficiary_ref.public_key_hash != expected {
            return Err(RejectReason::PolicyRefusal);
        }
        Ok(account_ids)
    }

    pub fn handle_transfer_notice(&mut self, from: &str, env: NoticeEnvelope, ctx: &mut NodeContext<'_>) {
        let notice = &env.notice;
        let vasp_cert = &env.originator_vasp_certificate;
        if from != notice.originator_vasp_id
            || vasp_cert.subject_id != notice.originator_vasp_id
            || !notice.verify(&vasp_cert.subject_public_key)
        {
            ctx.log(Event::NoticeDropped { from: from.to_string(), why: "bad signature".into() });
            return;
        }
        if self.records.contains_key(&(Role::BeneficiarySide, notice.notice_id)) {
            ctx.log(Event::NoticeDropped { from: from.to_string(), why: "duplicate".into() });
            return;
        }
        let decision = self.beneficiary_decision(notice, vasp_cert, ctx);
        let mut beneficiaries = Vec::new();
        let decision = match decision {
            Ok(account_ids) => {
                let mut outcome = AckDecision::Accept;
                for id in &account_ids {
                    let account = self.accounts[id].clone();
                    match (self.disclose(id, ctx), self.evidence_for(&account)) {
                        (Some(assertion), Some(evidence)) => {
                            beneficiaries.push(BeneficiaryEvidence { assertion, evidence })
                        }
                        _ => {
                            outcome = AckDecision::Reject(RejectReason::CertInvalid);
                            beneficiaries.clear();
                            break;
                        }
                    }
                }
                outcome
            }
            Err(reason) => AckDecision::Reject(reason),
        };
        let mut ack = TransferAck {
            notice_id: notice.notice_id,
            decision,
            beneficiaries,
            beneficiary_vasp_id: self.id.clone(),
            beneficiary_vasp_signature: Signature([0; 64]),
        };
        ack.sign(&self.keypair);
        if ack.is_accept() {
            self.records.insert(
                (Role::BeneficiarySide, notice.notice_id),
                TravelRuleRecord {
                    record_id: notice.notice_id,
                    role: Role::BeneficiarySide,
                    notice: notice.clone(),
                    ack: Some(ack.clone()),
                    chain_tx_id: None,
                    status: RecordStatus::PendingChain,
                    created_at: ctx.now,
                    updated_at: ctx.now,
                },
            );
        }
        let reject = match decision {
            AckDecision::Accept => None,
            AckDecision::Reject(r) => Some(r),
        };
        ctx.log(Event::AckSent { transfer_id: notice.notice_id, to: from.to_string(), reject });
        let envelope = AckEnvelope { ack, beneficiary_vasp_certificate: self.certificate.clone() };
        ctx.send(from, Payload::Ack(Box::new(envelope)));
    }

    fn fail(&mut self, id: TransferId, reason: DenyReason, ctx: &mut NodeContext<'_>) {
        self.pending.remove(&id);
        if let Some(record) = self.records.get_mut(&(Role::OriginatorSide, id)) {
            if record.transition(RecordStatus::Failed(reason), ctx.now) {
                ctx.log(Event::RecordFailed { transfer_id: id, role: Role::OriginatorSide, reason });
                ctx.log(Event::TransferDenied { transfer_id: id, reason });
            }
        }
    }

    fn ack_valid(&self, ack: &TransferAck, vasp_cert: &Certificate, pending: &PendingTransfer, notice: &TransferNotice, now: Tick) -> bool {
        if vasp_cert.digest() != pending.beneficiary_vasp_certificate.digest()
            || ack.beneficiary_vasp_id != notice.beneficiary_vasp_id
            || !ack.verify(&vasp_cert.subject_public_key)
        {
            return false;
        }
        if !ack.is_accept() {
            return true;
        }
        let policy = self.usage_policy();
        let validator = self.validator(&policy, now);
        let parties = notice.parties();
        ack.beneficiaries.len() == parties.len()
            && ack.beneficiaries.iter().zip(&parties).all(|(b, p)| {
                b.evidence.certificate.key_hash() == p.beneficiary_ref.public_key_hash
                    && verify_assertion(&b.assertion, vasp_cert, &b.evidence.certificate, &validator)
            })
    }

    pub fn handle_ack(&mut self, from: &str, env: AckEnvelope, ctx: &mut NodeContext<'_>) {
        let id = env.ack.notice_id;
        let open = self
            .records
            .get(&(Role::OriginatorSide, id))
            .is_some_and(|r| r.status == RecordStatus::PendingAck);
        let Some(pending) = self.pending.get(&id).filter(|_| open).cloned() else {
            ctx.log(Event::AckIgnored { transfer_id: id });
            return;
        };
        let notice = self.records[&(Role::OriginatorSide, id)].notice.clone();
        if from != notice.beneficiary_vasp_id
            || !self.ack_valid(&env.ack, &env.beneficiary_vasp_certificate, &pending, &notice, ctx.now)
        {
            self.fail(id, DenyReason::AckInvalid, ctx);
            return;
        }
        if let AckDecision::Reject(reason) = env.ack.decision {
            self.fail(id, DenyReason::AckRejected(reason), ctx);
            return;
        }
        ctx.log(Event::AckAccepted { transfer_id: id, binding: notice.intended_chain_tx_binding });
        if let Some(record) = self.records.get_mut(&(Role::OriginatorSide, id)) {
            record.ack = Some(env.ack.clone());
        }
        match self.execute_onchain(id, &pending, ctx) {
            Ok(tx_id) => {
                self.pending.remove(&id);
                let record = self.records.get_mut(&(Role::OriginatorSide, id)).expect("record exists");
                record.chain_tx_id = Some(tx_id);
                record.transition(RecordStatus::PendingChain, ctx.now);
            }
            Err(reason) => self.fail(id, reason, ctx),
        }
    }

    fn signing_key(&self, pending: &PendingTransfer) -> Option<&KeyPair> {
        let Some(account_id) = &pending.signer_account else {
            return Some(&self.keypair);
        };
        let account = self.accounts.get(account_id)?;
        match account.custody_model {
            CustodyModel::Mediated => self.wallets.get(account_id),
            CustodyModel::KeyCustody => account.custodied_private_key.as_ref(),
            CustodyModel::Commingled => Some(&self.keypair),
        }
    }

    /// Signs the committed transaction with the key the custody model
    /// dictates and submits it.
    fn execute_onchain(
        &self,
        id: TransferId,
        pending: &PendingTransfer,
        ctx: &mut NodeContext<'_>,
    ) -> Result<Hash32, DenyReason> {
        let key = self.signing_key(pending).ok_or(DenyReason::KeyUnavailable)?;
        if key.public_key() != pending.tx.from_public_key {
            return Err(DenyReason::KeyUnavailable);
        }
        let tx: ChainTransaction = pending.tx.clone().sign(key);
        let binding = self.records[&(Role::OriginatorSide, id)].notice.intended_chain_tx_binding;
        if tx.tx_id() != binding {
            return Err(DenyReason::BindingMismatch);
        }
        let tx_id = ctx.ledger.submit_transaction(tx, ctx.now).map_err(|_| DenyReason::ChainRejected)?;
        ctx.log(Event::ChainSubmitted { transfer_id: id, tx_id, from_key: pending.tx.from_public_key });
        Ok(tx_id)
    }

    /// Fails every originator record still waiting for an ack past the
    /// timeout.
    pub fn check_timeouts(&mut self, ctx: &mut NodeContext<'_>) {
        let expired: Vec<TransferId> = self
            .pending
            .iter()
            .filter(|(id, p)| {
                ctx.now >= p.sent_at + self.config.ack_timeout
                    && self.records.get(&(Role::OriginatorSide, **id)).is_some_and(|r| r.status == RecordStatus::PendingAck)
            })
            .map(|(id, _)| *id)
            .collect();
        for id in expired {
            self.fail(id, DenyReason::ChannelTimeout, ctx);
        }
    }

    pub fn on_chain_confirmation(&mut self, event: &ConfirmationEvent, ctx: &mut NodeContext<'_>) {
        let mut matched = false;
        for ((role, id), record) in self.records.iter_mut() {
            let hit = record.chain_tx_id == Some(event.tx_id)
                || (record.status == RecordStatus::PendingChain && record.notice.intended_chain_tx_binding == event.tx_id);
            if !hit || record.status != RecordStatus::PendingChain {
                continue;
            }
            matched = true;
            if event.tx.tx_id() != record.notice.intended_chain_tx_binding {
                record.transition(RecordStatus::Failed(DenyReason::BindingMismatch), ctx.now);
                ctx.log(Event::RecordFailed { transfer_id: *id, role: *role, reason: DenyReason::BindingMismatch });
                if *role == Role::OriginatorSide {
                    ctx.log(Event::TransferDenied { transfer_id: *id, reason: DenyReason::BindingMismatch });
                }
                continue;
            }
            record.chain_tx_id = Some(event.tx_id);
            record.transition(RecordStatus::Confirmed, ctx.now);
            ctx.log(Event::RecordConfirmed { transfer_id: *id, role: *role });
            if *role == Role::OriginatorSide {
                ctx.log(Event::TransferConfirmed { transfer_id: *id });
            }
        }
        let keys = self.known_keys();
        if !matched && (keys.contains(&event.tx.from_public_key()) || keys.contains(&event.tx.to_public_key())) {
            ctx.log(Event::UnmatchedConfirmation { tx_id: event.tx_id });
        }
    }

    pub fn reconcile(&self, ledger: &Ledger) -> ReconciliationReport {
        reconcile(self.records.values(), &self.known_keys(), ledger)
    }

    pub fn audit_travel_rule(&self) -> AuditReport {
        audit(self.records.values(), self.accounts.values())
    }

    // ---- directories and revocation ------------------------------------

    /// Entries for our own live customer certificates.
    fn live_entries(&self, ctx: &NodeContext<'_>) -> BTreeSet<DirectoryEntry> {
        self.accounts
            .values()
            .filter(|a| a.custody_model != CustodyModel::Commingled)
            .filter_map(|a| a.certificate.as_ref())
            .filter(|c| c.validity.contains(ctx.now) && self.status_good(c, ctx.cas, ctx.now))
            .map(|c| DirectoryEntry {
                certificate_serial: c.serial,
                public_key_hash: c.key_hash(),
                issuer_ca_id: c.issuer_id.clone(),
            })
            .collect()
    }

    /// Publishes our next snapshot in `network` and pushes what each
    /// neighbor lacks.
    pub fn publish_directory(
        &mut self,
        network: &str,
        ctx: &mut NodeContext<'_>,
    ) -> Option<(DirectorySnapshot, DirectoryDelta)> {
        let entries = self.live_entries(ctx);
        let published = self.replicas.get_mut(network)?.publish(entries);
        ctx.log(Event::DirectoryPublished {
            network: network.to_string(),
            version: published.0.version,
            entries: published.0.entries.len(),
        });
        self.relay(network, ctx);
        Some(published)
    }

    fn relay(&mut self, network: &str, ctx: &mut NodeContext<'_>) {
        let Some(net) = ctx.networks.get(network) else { return };
        let neighbors = net.neighbors(&self.id);
        let Some(replica) = self.replicas.get_mut(network) else { return };
        for n in neighbors {
            let items = replica.outgoing_for(&n);
            if !items.is_empty() {
                ctx.send(&n, Payload::Gossip { network: network.to_string(), items });
            }
        }
    }

    fn handle_gossip(&mut self, from: &str, network: &str, items: &[GossipItem], ctx: &mut NodeContext<'_>) {
        let Some(replica) = self.replicas.get_mut(network) else { return };
        let mut changed = false;
        let mut resync = BTreeSet::new();
        for item in items {
            let (publisher, version) = match item {
                GossipItem::Delta(d) => (d.owner_vasp_id().to_string(), d.to_version()),
                GossipItem::Snapshot(s) => (s.owner_vasp_id.clone(), s.version),
            };
            if resync.contains(&publisher) {
                continue;
            }
            match replica.apply_item(item) {
                DeltaOutcome::Applied => {
                    changed = true;
                    replica.note_neighbor_version(from, &publisher, version);
                    ctx.log(Event::GossipApplied { network: network.to_string(), publisher, version });
                }
                DeltaOutcome::AlreadyHave => replica.note_neighbor_version(from, &publisher, version),
                DeltaOutcome::ResyncRequired => {
                    resync.insert(publisher);
                }
            }
        }
        if changed {
            replica.purge_revoked(&self.revocations);
        }
        for publisher in resync {
            ctx.log(Event::ResyncRequested { network: network.to_string(), publisher: publisher.clone() });
            ctx.send(from, Payload::ResyncRequest { network: network.to_string(), publisher });
        }
        if changed {
            self.relay(network, ctx);
        }
    }

    pub fn ingest_revocations(&mut self, lists: &[RevocationList]) -> MergeSummary {
        self.revocations.merge_from(lists, &self.anchors)
    }

    /// Marks directory entries we now know to be revoked.
    pub fn purge_directories(&mut self) -> usize {
        let view = &self.revocations;
        self.replicas.values_mut().map(|r| r.purge_revoked(view)).sum()
    }

    /// Revocation lists to hand a peer.
    pub fn export_revocations(&self) -> Vec<RevocationList> {
        self.revocations.export()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ca::RevocationReason;
    use crate::sim::reference::{customer, empty, network, vasp, SETTLE_TICK};
    use crate::sim::{Action, CaSpec, CustomerSetup, ScriptEntry, World};

    /// Two settled VASPs in one network: alice (mediated) and no-cert at
    /// `vasp-o`, bob (key custody) and pool (commingled) at `vasp-b`.
    fn settled() -> World {
        let mut s = empty(3);
        s.cas = vec![CaSpec { id: "ca".into() }];
        s.networks = vec![network("net", &["ca"])];
        s.vasps = vec![vasp("vasp-o", "ca", &["net"]), vasp("vasp-b", "ca", &["net"])];
        let mut uncertified = customer("no-cert", "vasp-o", CustodyModel::Mediated);
        uncertified.setup = CustomerSetup::Opened;
        s.customers = vec![
            customer("alice", "vasp-o", CustodyModel::Mediated),
            uncertified,
            customer("bob", "vasp-b", CustodyModel::KeyCustody),
            customer("pool", "vasp-b", CustodyModel::Commingled),
        ];
        s.script = vec![ScriptEntry { tick: 0, action: Action::Advance { ticks: 100 } }];
        let mut world = World::new(s).unwrap();
        world.run_until(SETTLE_TICK).unwrap();
        world
    }

    struct Harness {
        nodes: BTreeMap<String, VaspNode>,
        cas: BTreeMap<String, CertificateAuthority>,
        networks: BTreeMap<String, TrustNetwork>,
        links: Vec<PeeringLink>,
        suspects: SuspectList,
        ledger: Ledger,
        now: Tick,
    }

    impl Harness {
        fn new(world: &World) -> Self {
            Self {
                nodes: world.nodes().clone(),
                cas: world.cas().clone(),
                networks: world.networks().clone(),
                links: world.links().to_vec(),
                suspects: SuspectList::new(),
                ledger: world.ledger().clone(),
                now: world.now(),
            }
        }

        /// Runs `f` on node `id` and returns its outbox and events.
        fn on<R>(
            &mut self,
            id: &str,
            f: impl FnOnce(&mut VaspNode, &mut NodeContext<'_>) -> R,
        ) -> (R, Vec<(String, Payload)>, Vec<Event>) {
            let mut node = self.nodes.remove(id).unwrap();
            let mut outbox = Vec::new();
            let mut events = Vec::new();
            let up = |_: usize| true;
            let node_up = |_: &str| true;
            let result = {
                let mut ctx = NodeContext {
                    now: self.now,
                    cas: &self.cas,
                    peers: &self.nodes,
                    networks: &self.networks,
                    links: &self.links,
                    link_up: &up,
                    node_up: &node_up,
                    suspects: &self.suspects,
                    ledger: &mut self.ledger,
                    outbox: &mut outbox,
                    events: &mut events,
                };
                f(&mut node, &mut ctx)
            };
            self.nodes.insert(id.to_string(), node);
            (result, outbox, events)
        }

        fn key_of(&self, vasp: &str, account: &str) -> PublicKey {
            self.nodes[vasp].account(account).unwrap().customer_public_key.unwrap()
        }
    }

    fn request(from: &str, target: TransferTarget) -> TransferRequest {
        TransferRequest { originator_account: from.into(), target, amount: 25, asset_type: "SIM".into() }
    }

    #[test]
    fn open_account_enforces_custody_key_rules() {
        let world = settled();
        let mut node = world.node("vasp-o").unwrap().clone();
        let key = crate::crypto::derive_keypair(b"w").public_key();
        let attrs = Attributes::new();
        assert!(matches!(
            node.open_account("x", "x", attrs.clone(), CustodyModel::Mediated, None, 0),
            Err(VaspError::ModelKeyMismatch(CustodyModel::Mediated))
        ));
        assert!(matches!(
            node.open_account("x", "x", attrs.clone(), CustodyModel::Commingled, Some(key), 0),
            Err(VaspError::ModelKeyMismatch(CustodyModel::Commingled))
        ));
        assert!(matches!(
            node.open_account("alice", "alice", attrs.clone(), CustodyModel::KeyCustody, None, 0),
            Err(VaspError::DuplicateAccount(_))
        ));
        let account = node.open_account("k", "k", attrs, CustodyModel::KeyCustody, None, 0).unwrap();
        assert!(account.custodied_private_key.is_some());
        assert_eq!(account.key_operator_evidence.as_ref().unwrap().operator_vasp_id, "vasp-o");
        assert_eq!(account.attributes["custody_model"], CustodyModel::KeyCustody.to_string());
        assert!(matches!(
            node.pair_wallet("k", crate::crypto::derive_keypair(b"w")),
            Err(VaspError::WalletMismatch)
        ));
        assert!(matches!(node.pair_wallet("nobody", crate::crypto::derive_keypair(b"w")), Err(VaspError::UnknownAccount(_))));
    }

    #[test]
    fn commingled_accounts_carry_the_vasp_certificate() {
        let world = settled();
        let node = world.node("vasp-b").unwrap();
        let pool = node.account("pool").unwrap();
        assert_eq!(pool.certificate.as_ref(), Some(node.certificate()));
        assert!(pool.customer_public_key.is_none());
        let mut node = node.clone();
        let mut ca = world.cas()["ca"].clone();
        let err = node.enroll_customer_certificate(
            "pool",
            &mut ca,
            CertClass::Class1,
            CertificateProfile::new("customer", CertClass::Class1),
            Validity::new(0, 100).unwrap(),
            0,
        );
        assert!(matches!(err, Err(VaspError::NoCustomerKey)));
    }

    #[test]
    fn query_answers_follow_certificate_status() {
        let world = settled();
        let mut h = Harness::new(&world);
        let bob = h.key_of("vasp-b", "bob");
        let node = &h.nodes["vasp-b"];
        assert!(matches!(node.answer_query(&bob.key_hash(), &h.cas, h.now), QueryAnswer::Found { .. }));
        assert_eq!(node.answer_account("missing", &h.cas, h.now), QueryAnswer::NotFound);
        assert_eq!(node.answer_query(&crate::crypto::digest(b"nobody"), &h.cas, h.now), QueryAnswer::NotFound);
        let serial = node.account("bob").unwrap().certificate.as_ref().unwrap().serial;
        h.cas.get_mut("ca").unwrap().revoke(&serial, RevocationReason::KeyCompromise, h.now).unwrap();
        let node = &h.nodes["vasp-b"];
        assert!(matches!(node.answer_query(&bob.key_hash(), &h.cas, h.now), QueryAnswer::Invalid { .. }));
    }

    #[test]
    fn resolution_prefers_local_then_reaches_peers() {
        let world = settled();
        let mut h = Harness::new(&world);
        let alice = h.key_of("vasp-o", "alice");
        let bob = h.key_of("vasp-b", "bob");
        let (local, _, _) = h.on("vasp-o", |n, ctx| n.resolve_beneficiary(&TransferTarget::PublicKey(alice), ctx));
        assert_eq!(local.unwrap().source, ResolutionSource::Local);
        let (remote, _, _) = h.on("vasp-o", |n, ctx| n.resolve_beneficiary(&TransferTarget::KeyHash(bob.key_hash()), ctx));
        let remote = remote.unwrap();
        assert_eq!(remote.home_vasp_id, "vasp-b");
        assert_eq!(remote.account_id.as_deref(), Some("bob"));
        assert_ne!(remote.source, ResolutionSource::Local);
        let unknown = TransferTarget::KeyHash(crate::crypto::digest(b"nobody"));
        let (missing, _, _) = h.on("vasp-o", |n, ctx| n.resolve_beneficiary(&unknown, ctx));
        assert!(missing.is_err());
    }

    #[test]
    fn uncertified_originator_is_denied_without_side_effects() {
        let world = settled();
        let mut h = Harness::new(&world);
        let bob = h.key_of("vasp-b", "bob");
        let before = h.ledger.pending_len();
        let (outcome, outbox, _) =
            h.on("vasp-o", |n, ctx| n.initiate_transfer(request("no-cert", TransferTarget::PublicKey(bob)), ctx));
        assert!(matches!(outcome, TransferOutcome::Denied(_, DenyReason::NoOriginatorCert)));
        assert!(outbox.is_empty());
        assert_eq!(h.ledger.pending_len(), before);
    }

    #[test]
    fn suspect_beneficiary_is_denied() {
        let world = settled();
        let mut h = Harness::new(&world);
        let bob = h.key_of("vasp-b", "bob");
        h.suspects.block_key_hash(bob.key_hash());
        let (outcome, outbox, _) =
            h.on("vasp-o", |n, ctx| n.initiate_transfer(request("alice", TransferTarget::PublicKey(bob)), ctx));
        assert!(matches!(outcome, TransferOutcome::Denied(_, DenyReason::SuspectParty)));
        assert!(outbox.is_empty());
    }

    #[test]
    fn notice_ack_round_trip_submits_only_after_acceptance() {
        let world = settled();
        let mut h = Harness::new(&world);
        let bob = h.key_of("vasp-b", "bob");
        let (outcome, outbox, _) =
            h.on("vasp-o", |n, ctx| n.initiate_transfer(request("alice", TransferTarget::PublicKey(bob)), ctx));
        let TransferOutcome::Pending(id) = outcome else { panic!("{outcome:?}") };
        let [(to, notice)] = outbox.try_into().unwrap();
        assert_eq!(to, "vasp-b");
        assert_eq!(h.ledger.pending_len(), 0);
        assert_eq!(h.nodes["vasp-o"].record(Role::OriginatorSide, &id).unwrap().status, RecordStatus::PendingAck);

        let (_, replies, _) = h.on("vasp-b", |n, ctx| n.handle_message("vasp-o", notice, ctx));
        let [(to, ack)] = replies.try_into().unwrap();
        assert_eq!(to, "vasp-o");
        assert!(matches!(&ack, Payload::Ack(env) if env.ack.is_accept()));
        assert!(h.nodes["vasp-b"].record(Role::BeneficiarySide, &id).is_some());

        h.on("vasp-o", |n, ctx| n.handle_message("vasp-b", ack, ctx));
        assert_eq!(h.ledger.pending_len(), 1);
        assert_eq!(h.nodes["vasp-o"].record(Role::OriginatorSide, &id).unwrap().status, RecordStatus::PendingChain);

        h.now += 5;
        let confirmations = h.ledger.tick(h.now);
        assert_eq!(confirmations.len(), 1);
        for vasp in ["vasp-o", "vasp-b"] {
            h.on(vasp, |n, ctx| n.on_chain_confirmation(&confirmations[0], ctx));
        }
        for (vasp, role) in [("vasp-o", Role::OriginatorSide), ("vasp-b", Role::BeneficiarySide)] {
            let node = &h.nodes[vasp];
            assert_eq!(node.record(role, &id).unwrap().status, RecordStatus::Confirmed);
            assert!(node.audit_travel_rule().violations.is_empty());
            let rec = node.reconcile(&h.ledger);
            assert!(rec.orphan_chain_txs.is_empty() && rec.unconfirmed_records.is_empty(), "{rec:?}");
        }
    }

    #[test]
    fn missing_ack_times_out() {
        let world = settled();
        let mut h = Harness::new(&world);
        let bob = h.key_of("vasp-b", "bob");
        let (outcome, _, _) =
            h.on("vasp-o", |n, ctx| n.initiate_transfer(request("alice", TransferTarget::PublicKey(bob)), ctx));
        let id = outcome.transfer_id();
        let timeout = h.nodes["vasp-o"].config().ack_timeout;
        h.now += timeout - 1;
        h.on("vasp-o", |n, ctx| n.check_timeouts(ctx));
        assert_eq!(h.nodes["vasp-o"].record(Role::OriginatorSide, &id).unwrap().status, RecordStatus::PendingAck);
        h.now += 1;
        let (_, _, events) = h.on("vasp-o", |n, ctx| n.check_timeouts(ctx));
        assert_eq!(
            h.nodes["vasp-o"].record(Role::OriginatorSide, &id).unwrap().status,
            RecordStatus::Failed(DenyReason::ChannelTimeout)
        );
        assert!(!events.is_empty());
        assert_eq!(h.ledger.pending_len(), 0);
    }
}
