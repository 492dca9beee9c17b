use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A message the ledger refused because it would overrun the receiver's
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub sender: u32,
    pub receiver: u32,
    pub bits: u64,
    /// Receiver's inbound total at the time of the request.
    pub inbound: u64,
    pub budget_bits: u64,
}

/// Per-round inbound bit accounting: the total over all links into any
/// receiver never exceeds `budget_bits`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetLedger {
    budget_bits: u64,
    consumed: BTreeMap<(u32, u32), u64>,
}

impl BudgetLedger {
    pub fn new(budget_bits: u64) -> Self {
        Self {
            budget_bits,
            consumed: BTreeMap::new(),
        }
    }

    pub fn budget_bits(&self) -> u64 {
        self.budget_bits
    }

    /// Bits consumed on the `(sender, receiver)` link.
    pub fn link(&self, sender: u32, receiver: u32) -> u64 {
        self.consumed.get(&(sender, receiver)).copied().unwrap_or(0)
    }

    pub fn inbound(&self, receiver: u32) -> u64 {
        self.consumed
            .iter()
            .filter(|((_, r), _)| *r == receiver)
            .map(|(_, &b)| b)
            .sum()
    }

    pub fn outbound(&self, sender: u32) -> u64 {
        self.consumed
            .iter()
            .filter(|((s, _), _)| *s == sender)
            .map(|(_, &b)| b)
            .sum()
    }

    pub fn links(&self) -> impl Iterator<Item = ((u32, u32), u64)> + '_ {
        self.consumed.iter().map(|(&k, &v)| (k, v))
    }

    /// Accept iff the receiver's inbound total plus `bits` stays within the
    /// budget. Accepted messages return the updated ledger; `self` is never
    /// modified.
    pub fn admit(&self, sender: u32, receiver: u32, bits: u64) -> Result<BudgetLedger, Rejection> {
        let inbound = self.inbound(receiver);
        let fits = inbound
            .checked_add(bits)
            .is_some_and(|total| total <= self.budget_bits);
        if !fits {
            return Err(Rejection {
                sender,
                receiver,
                bits,
                inbound,
                budget_bits: self.budget_bits,
            });
        }
        let mut next = self.clone();
        *next.consumed.entry((sender, receiver)).or_insert(0) += bits;
        Ok(next)
    }
}
