//! Namespaced contextual-bandit memory shared by the four agents.

mod bank;
mod feature;
mod item;
pub mod persist;
mod store;

pub use bank::{MemoryBank, OpEffect, StoreOp};
pub use feature::{BanditContext, EmptyContext, FeatureKey, FeatureKeyError, FeatureKind};
pub use item::{MemoryItem, Namespace, Timestamp, UnknownNamespace};
pub use store::{score_item, BanditError, BanditParams, NamespaceStore};
