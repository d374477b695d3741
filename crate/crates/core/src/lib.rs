//! Public-key management and travel-rule messaging between virtual asset
//! service providers, run inside a deterministic network simulation.

pub mod assertion;
pub mod ca;
pub mod chain;
pub mod crypto;
pub mod events;
pub mod message;
pub mod network;
pub mod sim;
pub mod vasp;

/// Simulation time.
pub type Tick = u64;

pub use assertion::AttributeAssertion;
pub use ca::{Certificate, CertificateAuthority, CertClass, RevocationReason, Serial};
pub use chain::{ChainTransaction, Ledger};
pub use crypto::{Hash32, KeyPair, PublicKey, Signature};
pub use events::Event;
pub use message::{Message, Payload};
pub use network::{OperatingRules, TrustNetwork};
pub use sim::{run_scenario, Report, Scenario, World};
pub use vasp::{CustodyModel, VaspNode};
