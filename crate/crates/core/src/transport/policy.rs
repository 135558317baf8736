use super::{PayloadKind, Transcript};
use crate::party::PartyId;
use crate::tensor::FxTensor;

/// A named plaintext quantity from an oracle run.
#[derive(Clone, Debug)]
pub struct Quantity {
    pub name: String,
    pub value: FxTensor,
}

impl Quantity {
    pub fn new(name: &str, value: FxTensor) -> Quantity {
        Quantity { name: name.to_string(), value }
    }
}

/// Which quantities each party must never hold in plaintext.
#[derive(Clone, Debug, Default)]
pub struct PrivacyPolicy {
    forbidden: Vec<(PartyId, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub party: PartyId,
    /// Step tag of the offending message, or `state:<field>`.
    pub location: String,
    pub quantity: String,
}

impl PrivacyPolicy {
    pub fn new() -> PrivacyPolicy {
        PrivacyPolicy::default()
    }

    pub fn forbid(mut self, party: PartyId, names: &[&str]) -> PrivacyPolicy {
        self.forbidden.extend(names.iter().map(|n| (party, n.to_string())));
        self
    }

    /// Restrictions for the MatMul source layer.
    pub fn matmul() -> PrivacyPolicy {
        PrivacyPolicy::new()
            .forbid(PartyId::A, &["Z", "XA_WA", "XB_WB", "grad_Z", "grad_WA", "grad_WB", "WA", "WB"])
            .forbid(PartyId::B, &["XA_WA", "XB_WB", "grad_WA", "WA", "WB"])
    }

    /// Restrictions for the Embed-MatMul source layer.
    pub fn embed_matmul() -> PrivacyPolicy {
        let shared = [
            "EA", "EB", "EA_WA", "EB_WB", "grad_EA", "grad_EB", "grad_WA", "grad_QA", "grad_QB", "QA", "QB", "WA", "WB",
        ];
        let mut a: Vec<&str> = shared.to_vec();
        a.extend(["Z", "grad_Z", "grad_WB"]);
        PrivacyPolicy::new().forbid(PartyId::A, &a).forbid(PartyId::B, &shared)
    }

    pub fn forbidden_for(&self, party: PartyId) -> Vec<&str> {
        self.forbidden.iter().filter(|(p, _)| *p == party).map(|(_, n)| n.as_str()).collect()
    }
}

/// True if `t`, read as raw integers at any of `scales`, equals `q` (or its
/// transpose) at that scale. All-zero quantities never match.
fn matches(t: &FxTensor, q: &FxTensor, scales: &[u32]) -> bool {
    if q.is_zero() {
        return false;
    }
    let traw = t.raw();
    for cand in [q.clone(), q.transpose()] {
        if cand.shape() != t.shape() {
            continue;
        }
        for &s in scales {
            let at = if s >= cand.scale() {
                cand.upscale(s - cand.scale())
            } else {
                match cand.truncate(cand.scale() - s) {
                    Ok(v) => v,
                    Err(_) => continue,
                }
            };
            if !at.is_zero() && at.raw() == traw {
                return true;
            }
        }
    }
    false
}

fn forbidden_truth<'a>(party: PartyId, policy: &PrivacyPolicy, truth: &'a [Quantity]) -> Vec<&'a Quantity> {
    let names = policy.forbidden_for(party);
    truth.iter().filter(|q| names.contains(&q.name.as_str())).collect()
}

/// Scans every message the transcript's owner received for plaintext
/// occurrences of its forbidden quantities. Ciphertext payloads are only
/// parsed structurally, never decrypted.
pub fn scan_transcript(t: &Transcript, policy: &PrivacyPolicy, truth: &[Quantity], scales: &[u32]) -> Vec<Violation> {
    let forbidden = forbidden_truth(t.party, policy, truth);
    let mut out = Vec::new();
    for m in t.received() {
        if matches!(m.kind, PayloadKind::PublicKey | PayloadKind::Control) {
            continue;
        }
        let Ok(tensor) = FxTensor::from_wire(&m.payload) else { continue };
        for q in &forbidden {
            if matches(&tensor, &q.value, scales) {
                out.push(Violation { party: t.party, location: m.step_tag.clone(), quantity: q.name.clone() });
            }
        }
    }
    out
}

/// Scans a party's plaintext state tensors.
pub fn scan_state(
    party: PartyId,
    state: &[(String, FxTensor)],
    policy: &PrivacyPolicy,
    truth: &[Quantity],
    scales: &[u32],
) -> Vec<Violation> {
    let forbidden = forbidden_truth(party, policy, truth);
    let mut out = Vec::new();
    for (field, tensor) in state {
        for q in &forbidden {
            if matches(tensor, &q.value, scales) {
                out.push(Violation { party, location: format!("state:{field}"), quantity: q.name.clone() });
            }
        }
    }
    out
}
