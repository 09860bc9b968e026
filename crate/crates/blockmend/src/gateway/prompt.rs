//! Prompt construction from the case, the scheduling signal, and the plan.

use super::{Attachment, AttachmentOrigin, PromptBundle};
use crate::controller::{EvidencePolicy, RepairPlan, ScheduleSignal, Verbosity};
use crate::patch::PatchSchema;
use crate::vm::snapshot::StageSnapshot;

/// Compact case description handed to the prompt builder.
#[derive(Debug, Clone, Default)]
pub struct CaseBrief {
    pub case_id: String,
    pub description: Option<String>,
    pub localization_hints: Vec<String>,
    /// Canonical `project.json` text of the buggy project.
    pub project_json: String,
    /// Image assets from the archive, used when the probe captured no
    /// snapshots but the plan wants visual evidence.
    pub asset_images: Vec<Attachment>,
}

const SYSTEM_TEXT: &str = "You repair block-language projects. You receive one buggy project.json, \
runtime signals from a short probe, and sometimes stage images. Respond with a JSON Patch: a bare \
JSON array of RFC 6902 operations against project.json. Respect the operation budget in the schema. \
Prefer the smallest edit that fixes the observed behavior.";

/// Builds the system text, user text, response schema, and attachments for
/// one attempt. Attachments are the first `plan.max_snapshots` snapshots;
/// when the probe captured none, image assets from the project stand in.
pub fn build_prompt(
    brief: &CaseBrief,
    signal: &ScheduleSignal,
    plan: &RepairPlan,
    retry_feedback: Option<&str>,
    snapshots: &[StageSnapshot],
) -> PromptBundle {
    let schema = PatchSchema {
        max_ops: plan.max_patch_ops,
        allowed_kinds: plan
            .allowed_kinds
            .clone()
            .unwrap_or_else(|| crate::patch::PatchOpKind::ALL.into_iter().collect()),
        allowed_path_prefixes: plan.allowed_path_prefixes.clone(),
    };

    let mut user = String::new();
    user.push_str(&format!("Case: {}\n", brief.case_id));
    if let Some(desc) = &brief.description {
        user.push_str(&format!("Description: {desc}\n"));
    }
    user.push_str(&format!(
        "Probe signal: divergence={:?} mismatch={:?} stability={:?} pass_gap={:.3}\n",
        signal.divergence, signal.mismatch, signal.stability, signal.pass_gap
    ));
    if !brief.localization_hints.is_empty() {
        user.push_str(&format!("Localization hints: {}\n", brief.localization_hints.join("; ")));
    }
    user.push_str(
        "Stay local to the hinted blocks unless the signal indicates a broader change.\n",
    );
    user.push_str(&format!(
        "Patch budget: at most {} operations ({} evidence, {} prompt).\n",
        plan.max_patch_ops,
        match plan.evidence {
            EvidencePolicy::TextOnly => "text-only",
            EvidencePolicy::Multimodal => "multimodal",
        },
        match plan.verbosity {
            Verbosity::Compact => "compact",
            Verbosity::Detailed => "detailed",
        }
    ));
    if let Some(feedback) = retry_feedback {
        user.push_str(&format!("Previous attempt feedback: {feedback}\n"));
    }
    if plan.verbosity == Verbosity::Detailed {
        user.push_str("Explain nothing; output only the patch array.\n");
    }
    user.push_str("project.json:\n");
    user.push_str(&brief.project_json);

    let attachments = if plan.evidence == EvidencePolicy::Multimodal && plan.max_snapshots > 0 {
        select_attachments(snapshots, &brief.asset_images, plan.max_snapshots)
    } else {
        Vec::new()
    };
    let images_available =
        if snapshots.is_empty() { brief.asset_images.len() } else { snapshots.len() };

    PromptBundle {
        system_text: SYSTEM_TEXT.to_string(),
        user_text: user,
        response_schema: schema.to_json_schema(),
        attachments,
        images_available,
    }
}

fn select_attachments(
    snapshots: &[StageSnapshot],
    assets: &[Attachment],
    cap: usize,
) -> Vec<Attachment> {
    if !snapshots.is_empty() {
        return snapshots
            .iter()
            .take(cap)
            .map(|s| Attachment {
                bytes: s.encoded.clone(),
                media_type: "image/x-portable-pixmap".into(),
                width: s.width,
                height: s.height,
                origin: AttachmentOrigin::ProbeSnapshot,
            })
            .collect();
    }
    assets.iter().take(cap).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{ControllerConfig, ControllerMode, Divergence, MismatchBreadth, Stability};
    use crate::vm::interp::VmState;
    use crate::vm::snapshot::capture_snapshot;

    fn signal() -> ScheduleSignal {
        ScheduleSignal {
            divergence: Divergence::Early,
            mismatch: MismatchBreadth::Broad,
            stability: Stability::Stable,
            pass_gap: 0.5,
        }
    }

    fn snapshot() -> StageSnapshot {
        capture_snapshot(&VmState {
            tick: 1,
            sprites: Default::default(),
            variables: Default::default(),
            pending_broadcasts: vec![],
            rng_state: 0,
        })
    }

    fn plans() -> (RepairPlan, RepairPlan) {
        let cfg = ControllerConfig::default_with_seed(ControllerMode::Heuristic, 1);
        (cfg.plan_ladder[0].clone(), cfg.plan_ladder[2].clone())
    }

    #[test]
    fn text_plan_attaches_nothing_and_caps_schema() {
        let (p0, _) = plans();
        let brief = CaseBrief { case_id: "c1".into(), ..Default::default() };
        let bundle = build_prompt(&brief, &signal(), &p0, None, &[snapshot()]);
        assert!(bundle.attachments.is_empty());
        assert_eq!(bundle.response_schema["maxItems"], serde_json::json!(3));
        assert_eq!(bundle.images_available, 1);
    }

    #[test]
    fn multimodal_plan_caps_attachments() {
        let (_, p2) = plans();
        let brief = CaseBrief { case_id: "c1".into(), ..Default::default() };
        let snaps = vec![snapshot(), snapshot(), snapshot(), snapshot()];
        let bundle = build_prompt(&brief, &signal(), &p2, None, &snaps);
        assert_eq!(bundle.attachments.len(), 2);
        assert_eq!(bundle.attachments[0].origin, AttachmentOrigin::ProbeSnapshot);
    }

    #[test]
    fn falls_back_to_project_assets() {
        let (_, p2) = plans();
        let asset = super::super::wire::attachment_from_asset("bg.png", b"fakepng").unwrap();
        let brief = CaseBrief {
            case_id: "c1".into(),
            asset_images: vec![asset],
            ..Default::default()
        };
        let bundle = build_prompt(&brief, &signal(), &p2, None, &[]);
        assert_eq!(bundle.attachments.len(), 1);
        assert_eq!(bundle.attachments[0].origin, AttachmentOrigin::ProjectAsset);
        assert_eq!(bundle.images_available, 1);
    }

    #[test]
    fn retry_feedback_lands_in_user_text() {
        let (p0, _) = plans();
        let brief = CaseBrief { case_id: "c1".into(), ..Default::default() };
        let bundle =
            build_prompt(&brief, &signal(), &p0, Some("failing checks: c2, c4"), &[]);
        assert!(bundle.user_text.contains("failing checks: c2, c4"));
        assert!(bundle.user_text.contains("Probe signal"));
    }
}
