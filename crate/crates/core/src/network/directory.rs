//! Known-good key directories: per-publisher versioned snapshots, the
//! deltas between them, and each member's replica of everyone else's.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::NetworkError;
use crate::ca::{RevocationView, Serial};
use crate::crypto::{encode_list, Hash32, TlvWriter};

/// How many deltas a publisher or replica keeps for forwarding.
pub const DELTA_LOG_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectoryEntry {
    pub certificate_serial: Serial,
    pub public_key_hash: Hash32,
    pub issuer_ca_id: String,
}

impl DirectoryEntry {
    pub fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.certificate_serial.0)
            .bytes(2, &self.public_key_hash.0)
            .str(3, &self.issuer_ca_id)
            .finish()
    }
}

fn encode_entries(entries: &BTreeSet<DirectoryEntry>) -> Vec<u8> {
    encode_list(entries.iter().map(DirectoryEntry::encode))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectorySnapshot {
    pub owner_vasp_id: String,
    pub version: u64,
    pub entries: BTreeSet<DirectoryEntry>,
}

impl DirectorySnapshot {
    pub fn empty(owner_vasp_id: impl Into<String>) -> Self {
        Self {
            owner_vasp_id: owner_vasp_id.into(),
            version: 0,
            entries: BTreeSet::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .str(1, &self.owner_vasp_id)
            .u64(2, self.version)
            .bytes(3, &encode_entries(&self.entries))
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryDelta {
    owner_vasp_id: String,
    from_version: u64,
    added: BTreeSet<DirectoryEntry>,
    removed: BTreeSet<DirectoryEntry>,
}

impl DirectoryDelta {
    pub fn new(
        owner_vasp_id: impl Into<String>,
        from_version: u64,
        added: BTreeSet<DirectoryEntry>,
        removed: BTreeSet<DirectoryEntry>,
    ) -> Result<Self, NetworkError> {
        if added.intersection(&removed).next().is_some() {
            return Err(NetworkError::OverlappingDelta);
        }
        Ok(Self {
            owner_vasp_id: owner_vasp_id.into(),
            from_version,
            added,
            removed,
        })
    }

    /// The delta that turns `old` into a snapshot holding `entries`.
    pub fn between(old: &DirectorySnapshot, entries: &BTreeSet<DirectoryEntry>) -> Self {
        Self {
            owner_vasp_id: old.owner_vasp_id.clone(),
            from_version: old.version,
            added: entries.difference(&old.entries).cloned().collect(),
            removed: old.entries.difference(entries).cloned().collect(),
        }
    }

    pub fn owner_vasp_id(&self) -> &str {
        &self.owner_vasp_id
    }

    pub fn from_version(&self) -> u64 {
        self.from_version
    }

    pub fn to_version(&self) -> u64 {
        self.from_version + 1
    }

    pub fn added(&self) -> &BTreeSet<DirectoryEntry> {
        &self.added
    }

    pub fn removed(&self) -> &BTreeSet<DirectoryEntry> {
        &self.removed
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    /// `None` when `base` is not the snapshot this delta starts from.
    pub fn apply_to(&self, base: &DirectorySnapshot) -> Option<DirectorySnapshot> {
        if base.owner_vasp_id != self.owner_vasp_id || base.version != self.from_version {
            return None;
        }
        let mut entries = base.entries.clone();
        for e in &self.removed {
            entries.remove(e);
        }
        entries.extend(self.added.iter().cloned());
        Some(DirectorySnapshot {
            owner_vasp_id: self.owner_vasp_id.clone(),
            version: self.to_version(),
            entries,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .str(1, &self.owner_vasp_id)
            .u64(2, self.from_version)
            .u64(3, self.to_version())
            .bytes(4, &encode_entries(&self.added))
            .bytes(5, &encode_entries(&self.removed))
            .finish()
    }
}

/// What a gossip push carries for one publisher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GossipItem {
    Delta(DirectoryDelta),
    Snapshot(DirectorySnapshot),
}

impl GossipItem {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            GossipItem::Delta(d) => TlvWriter::new().bytes(1, &d.to_bytes()).finish(),
            GossipItem::Snapshot(s) => TlvWriter::new().bytes(2, &s.to_bytes()).finish(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaOutcome {
    Applied,
    AlreadyHave,
    ResyncRequired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PublisherView {
    snapshot: DirectorySnapshot,
    log: VecDeque<DirectoryDelta>,
    // Serials known to be revoked or reported invalid since publication.
    stale: BTreeSet<Serial>,
}

impl PublisherView {
    fn new(owner: &str) -> Self {
        Self {
            snapshot: DirectorySnapshot::empty(owner),
            log: VecDeque::new(),
            stale: BTreeSet::new(),
        }
    }

    fn record(&mut self, delta: DirectoryDelta) {
        self.log.push_back(delta);
        while self.log.len() > DELTA_LOG_LEN {
            self.log.pop_front();
        }
    }

    fn item_after(&self, version: u64) -> Option<Vec<GossipItem>> {
        if self.snapshot.version <= version {
            return None;
        }
        let reachable = self.log.front().is_some_and(|d| d.from_version <= version);
        if reachable {
            Some(
                self.log
                    .iter()
                    .filter(|d| d.from_version >= version)
                    .cloned()
                    .map(GossipItem::Delta)
                    .collect(),
            )
        } else {
            Some(vec![GossipItem::Snapshot(self.snapshot.clone())])
        }
    }
}

/// One member's directory state within one network: its own published
/// snapshots and its replicas of every other publisher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryReplica {
    holder: String,
    views: BTreeMap<String, PublisherView>,
    // Highest version each neighbor is known to hold, per publisher.
    neighbor_versions: BTreeMap<(String, String), u64>,
}

impl DirectoryReplica {
    pub fn new(holder: impl Into<String>) -> Self {
        let holder = holder.into();
        let mut views = BTreeMap::new();
        views.insert(holder.clone(), PublisherView::new(&holder));
        Self {
            holder,
            views,
            neighbor_versions: BTreeMap::new(),
        }
    }

    pub fn holder(&self) -> &str {
        &self.holder
    }

    /// Publishes the holder's next snapshot. The version always advances,
    /// even when nothing changed.
    pub fn publish(&mut self, entries: BTreeSet<DirectoryEntry>) -> (DirectorySnapshot, DirectoryDelta) {
        let view = self.views.get_mut(&self.holder).expect("own view exists");
        let delta = DirectoryDelta::between(&view.snapshot, &entries);
        view.snapshot = delta.apply_to(&view.snapshot).expect("delta built from this snapshot");
        view.stale.clear();
        view.record(delta.clone());
        (view.snapshot.clone(), delta)
    }

    pub fn own_snapshot(&self) -> &DirectorySnapshot {
        &self.views[&self.holder].snapshot
    }

    pub fn view(&self, publisher: &str) -> Option<&DirectorySnapshot> {
        self.views.get(publisher).map(|v| &v.snapshot)
    }

    pub fn publishers(&self) -> impl Iterator<Item = &str> {
        self.views.keys().map(String::as_str)
    }

    pub fn apply_delta(&mut self, delta: &DirectoryDelta) -> DeltaOutcome {
        if delta.owner_vasp_id == self.holder {
            return DeltaOutcome::AlreadyHave;
        }
        let view = self
            .views
            .entry(delta.owner_vasp_id.clone())
            .or_insert_with(|| PublisherView::new(&delta.owner_vasp_id));
        if delta.to_version() <= view.snapshot.version {
            return DeltaOutcome::AlreadyHave;
        }
        match delta.apply_to(&view.snapshot) {
            Some(next) => {
                view.snapshot = next;
                view.stale.retain(|s| view.snapshot.entries.iter().any(|e| e.certificate_serial == *s));
                view.record(delta.clone());
                DeltaOutcome::Applied
            }
            None => DeltaOutcome::ResyncRequired,
        }
    }

    /// Installs a full snapshot if it is newer than the current view.
    pub fn apply_snapshot(&mut self, snapshot: &DirectorySnapshot) -> bool {
        if snapshot.owner_vasp_id == self.holder {
            return false;
        }
        let view = self
            .views
            .entry(snapshot.owner_vasp_id.clone())
            .or_insert_with(|| PublisherView::new(&snapshot.owner_vasp_id));
        if snapshot.version <= view.snapshot.version {
            return false;
        }
        view.snapshot = snapshot.clone();
        view.log.clear();
        view.stale.retain(|s| snapshot.entries.iter().any(|e| e.certificate_serial == *s));
        true
    }

    pub fn apply_item(&mut self, item: &GossipItem) -> DeltaOutcome {
        match item {
            GossipItem::Delta(d) => self.apply_delta(d),
            GossipItem::Snapshot(s) => {
                if self.apply_snapshot(s) {
                    DeltaOutcome::Applied
                } else {
                    DeltaOutcome::AlreadyHave
                }
            }
        }
    }

    /// Notes that `neighbor` holds `publisher` at `version` or later.
    pub fn note_neighbor_version(&mut self, neighbor: &str, publisher: &str, version: u64) {
        let slot = self
            .neighbor_versions
            .entry((neighbor.to_string(), publisher.to_string()))
            .or_insert(0);
        *slot = (*slot).max(version);
    }

    /// Everything `neighbor` has not been sent yet, oldest first per
    /// publisher. Marks it as sent.
    pub fn outgoing_for(&mut self, neighbor: &str) -> Vec<GossipItem> {
        let mut items = Vec::new();
        for (publisher, view) in &self.views {
            if publisher == neighbor {
                continue;
            }
            let key = (neighbor.to_string(), publisher.clone());
            let known = self.neighbor_versions.get(&key).copied().unwrap_or(0);
            if let Some(batch) = view.item_after(known) {
                items.extend(batch);
                self.neighbor_versions.insert(key, view.snapshot.version);
            }
        }
        items
    }

    /// Snapshot answering a resync pull.
    pub fn snapshot_for(&self, publisher: &str) -> Option<DirectorySnapshot> {
        self.view(publisher).cloned()
    }

    pub fn mark_stale(&mut self, publisher: &str, serial: Serial) {
        if let Some(view) = self.views.get_mut(publisher) {
            if view.snapshot.entries.iter().any(|e| e.certificate_serial == serial) {
                view.stale.insert(serial);
            }
        }
    }

    /// Marks every entry the revocation view lists as revoked. Returns how
    /// many entries were newly marked.
    pub fn purge_revoked(&mut self, revocations: &RevocationView) -> usize {
        let mut marked = 0;
        for view in self.views.values_mut() {
            for e in &view.snapshot.entries {
                if revocations.is_revoked(&e.issuer_ca_id, &e.certificate_serial).is_some()
                    && view.stale.insert(e.certificate_serial)
                {
                    marked += 1;
                }
            }
        }
        marked
    }

    /// Live entries across all publishers, holder included.
    pub fn live_entries(&self) -> impl Iterator<Item = (&str, &DirectoryEntry)> {
        self.views.iter().flat_map(|(p, v)| {
            v.snapshot
                .entries
                .iter()
                .filter(move |e| !v.stale.contains(&e.certificate_serial))
                .map(move |e| (p.as_str(), e))
        })
    }

    pub fn live_hashes(&self) -> BTreeSet<Hash32> {
        self.live_entries().map(|(_, e)| e.public_key_hash).collect()
    }

    /// First publisher (by id) advertising a live entry for `hash`.
    pub fn lookup(&self, hash: &Hash32) -> Option<(&str, &DirectoryEntry)> {
        self.live_entries().find(|(_, e)| e.public_key_hash == *hash)
    }
}
