#![allow(dead_code)]

use std::path::PathBuf;

use stancegraph_core::annotation::{self, AnnotationDoc};
use stancegraph_core::clip::{load_manifest_file, ClipLibrary, Strictness, TaxonomyKind};
use stancegraph_core::graph::MetaGraph;
use stancegraph_core::planner::Schedule;
use stancegraph_core::pose::{BodyPart, Joint, Skeleton};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load(name: &str) -> ClipLibrary {
    load_manifest_file(&fixture(name), Strictness::Strict).unwrap()
}

pub fn conversation() -> AnnotationDoc {
    annotation::parse(&std::fs::read_to_string(fixture("conversation.tsvann")).unwrap()).unwrap()
}

/// hips, spine, head, two 2-joint arms, two legs.
pub fn skeleton() -> Skeleton {
    let j = |name: &str, parent, body_part| Joint {
        name: name.into(),
        parent,
        body_part,
    };
    Skeleton::new(vec![
        j("hips", None, BodyPart::Spine),
        j("spine", Some(0), BodyPart::Spine),
        j("head", Some(1), BodyPart::Head),
        j("l_shoulder", Some(1), BodyPart::Arms),
        j("l_hand", Some(3), BodyPart::Arms),
        j("r_shoulder", Some(1), BodyPart::Arms),
        j("r_hand", Some(5), BodyPart::Arms),
        j("l_leg", Some(0), BodyPart::Legs),
        j("r_leg", Some(0), BodyPart::Legs),
    ])
    .unwrap()
}

/// Replays a schedule against the clip metadata and counts clips whose
/// owning stance is not the one the layer is in at that point.
pub fn continuity_violations(s: &Schedule, g: &MetaGraph) -> usize {
    let mut bad = 0;
    for (layer, clips) in &s.layers {
        let mut stance = s.initial_stances.get(layer).cloned();
        for c in clips {
            let meta = g.clip(&c.clip).unwrap();
            match meta.kind {
                TaxonomyKind::Stance => {
                    if stance.as_deref() != Some(meta.id.as_str()) {
                        bad += 1;
                    }
                }
                _ => {
                    if meta.stance != stance {
                        bad += 1;
                    }
                    if meta.kind == TaxonomyKind::StanceTransition {
                        stance = meta.to_stance.clone();
                    }
                }
            }
        }
        if stance != s.final_stances.get(layer).cloned() {
            bad += 1;
        }
    }
    bad
}
