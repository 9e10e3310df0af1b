use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type PartyId = String;
pub type BranchId = String;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartyError {
    #[error("party {0} has no branches")]
    NoBranches(PartyId),
    #[error("branch {branch} names party {named}, expected {party}")]
    ForeignBranch { party: PartyId, branch: BranchId, named: PartyId },
    #[error("duplicate party id {0}")]
    DuplicateParty(PartyId),
    #[error("designated multibranch office {0} is not listed in the schedule")]
    UnlistedMultibranch(BranchId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum IncorporationStatus {
    #[default]
    Valid,
    Unknown,
    Lapsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub branch_id: BranchId,
    pub party_id: PartyId,
    pub office_location: String,
    #[serde(default)]
    pub designated_multibranch: bool,
}

/// A contracting legal entity. The first branch is its head office.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Party {
    pub party_id: PartyId,
    pub name: String,
    pub jurisdiction: String,
    #[serde(default)]
    pub incorporation_status: IncorporationStatus,
    pub branches: Vec<Branch>,
}

impl Party {
    /// A party with only a head office at its jurisdiction.
    pub fn simple(id: &str, name: &str, jurisdiction: &str) -> Party {
        Party {
            party_id: id.into(),
            name: name.into(),
            jurisdiction: jurisdiction.into(),
            incorporation_status: IncorporationStatus::Valid,
            branches: alloc::vec![Branch {
                branch_id: alloc::format!("{id}-HO"),
                party_id: id.into(),
                office_location: jurisdiction.into(),
                designated_multibranch: false,
            }],
        }
    }

    pub fn head_office(&self) -> Option<&Branch> {
        self.branches.first()
    }

    pub fn branch(&self, id: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.branch_id == id)
    }

    pub fn validate(&self) -> Result<(), PartyError> {
        if self.branches.is_empty() {
            return Err(PartyError::NoBranches(self.party_id.clone()));
        }
        for b in &self.branches {
            if b.party_id != self.party_id {
                return Err(PartyError::ForeignBranch {
                    party: self.party_id.clone(),
                    branch: b.branch_id.clone(),
                    named: b.party_id.clone(),
                });
            }
        }
        Ok(())
    }
}
