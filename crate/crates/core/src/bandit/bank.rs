use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::feature::BanditContext;
use super::item::{MemoryItem, Namespace, Timestamp};
use super::persist::{self, PersistError};
use super::store::{BanditError, BanditParams, NamespaceStore};

/// A recorded mutation of a namespace store. Every write the engine makes
/// goes through [`MemoryBank::apply`], so replaying a log of these against
/// fresh stores reproduces the same state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StoreOp {
    Insert { item: MemoryItem },
    Touch { namespace: Namespace, ids: Vec<String>, at: Timestamp },
    Reward {
        namespace: Namespace,
        id: String,
        reward: f64,
        context: BanditContext,
        at: Timestamp,
    },
    Sweep { namespace: Namespace },
}

impl StoreOp {
    pub fn namespace(&self) -> Namespace {
        match self {
            StoreOp::Insert { item } => item.namespace,
            StoreOp::Touch { namespace, .. }
            | StoreOp::Reward { namespace, .. }
            | StoreOp::Sweep { namespace } => *namespace,
        }
    }
}

/// What applying an op produced.
#[derive(Debug, Clone, PartialEq)]
pub enum OpEffect {
    Inserted,
    Touched,
    Rewarded(MemoryItem),
    Deprecated(usize),
}

/// All five namespace stores.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    stores: BTreeMap<Namespace, NamespaceStore>,
}

impl Default for MemoryBank {
    fn default() -> Self {
        Self::with_params(BanditParams::default())
    }
}

impl MemoryBank {
    pub fn with_params(params: BanditParams) -> Self {
        Self {
            stores: Namespace::ALL
                .into_iter()
                .map(|ns| (ns, NamespaceStore::with_params(ns, params)))
                .collect(),
        }
    }

    pub fn store(&self, ns: Namespace) -> &NamespaceStore {
        &self.stores[&ns]
    }

    pub fn store_mut(&mut self, ns: Namespace) -> &mut NamespaceStore {
        self.stores.get_mut(&ns).expect("every namespace is present")
    }

    pub fn apply(&mut self, op: &StoreOp) -> Result<OpEffect, BanditError> {
        match op {
            StoreOp::Insert { item } => {
                self.store_mut(item.namespace).insert(item.clone())?;
                Ok(OpEffect::Inserted)
            }
            StoreOp::Touch { namespace, ids, at } => {
                self.store_mut(*namespace).touch(ids, *at)?;
                Ok(OpEffect::Touched)
            }
            StoreOp::Reward {
                namespace,
                id,
                reward,
                context,
                at,
            } => self
                .store_mut(*namespace)
                .apply_reward(id, *reward, context, *at)
                .map(OpEffect::Rewarded),
            StoreOp::Sweep { namespace } => Ok(OpEffect::Deprecated(self.store_mut(*namespace).deprecation_sweep())),
        }
    }

    pub fn load(dir: &Path, timeout: Duration) -> Result<Self, PersistError> {
        let mut stores = BTreeMap::new();
        for ns in Namespace::ALL {
            stores.insert(ns, persist::load_or_empty(dir, ns, timeout)?);
        }
        Ok(Self { stores })
    }

    pub fn persist(&self, dir: &Path, timeout: Duration) -> Result<(), PersistError> {
        for store in self.stores.values() {
            persist::persist(store, dir, timeout)?;
        }
        Ok(())
    }
}
