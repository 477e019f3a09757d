//! Coding-order schedules for the All Intra, Low-delay P and Random Access
//! configurations, plus an invariant checker.
//!
//! Random Access places an I frame at every multiple of the intra period, P
//! anchors at the remaining GOP boundaries, and fills GOP interiors with a
//! dyadic B pyramid referencing the nearest already-coded past and future
//! frames. Trailing frames that do not fill a GOP are coded as a P chain.

use std::collections::HashSet;

use thiserror::Error;

use super::FrameType;

/// Coding configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ScheduleConfig {
    /// All Intra: every frame is an I frame.
    Ai,
    /// Low-delay P: one initial I frame followed by P frames.
    Ldp,
    /// Random Access: periodic I frames with hierarchical B pyramids.
    Ra,
}

impl ScheduleConfig {
    pub fn tag(self) -> u8 {
        match self {
            ScheduleConfig::Ai => 0,
            ScheduleConfig::Ldp => 1,
            ScheduleConfig::Ra => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ScheduleConfig::Ai),
            1 => Some(ScheduleConfig::Ldp),
            2 => Some(ScheduleConfig::Ra),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ai" => Some(ScheduleConfig::Ai),
            "ldp" => Some(ScheduleConfig::Ldp),
            "ra" => Some(ScheduleConfig::Ra),
            _ => None,
        }
    }
}

impl std::fmt::Display for ScheduleConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScheduleConfig::Ai => "ai",
            ScheduleConfig::Ldp => "ldp",
            ScheduleConfig::Ra => "ra",
        };
        write!(f, "{s}")
    }
}

/// One coding step: which frame to code, as what type, from which references.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodingStep {
    pub display_index: usize,
    pub frame_type: FrameType,
    pub past_ref: Option<usize>,
    pub future_ref: Option<usize>,
}

/// A complete coding plan in coding order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingSchedule {
    pub steps: Vec<CodingStep>,
    pub config: ScheduleConfig,
    pub intra_period: usize,
    pub gop_size: usize,
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("n_frames must be >= 1")]
    EmptySequence,
    #[error("gop_size {0} must be a power of two")]
    GopNotPowerOfTwo(usize),
    #[error("intra_period {intra_period} must be a positive multiple of gop_size {gop_size}")]
    IntraPeriodMismatch { intra_period: usize, gop_size: usize },
}

/// A violated schedule invariant, reported by [`validate_schedule`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    /// A reference display index is not coded by an earlier step.
    Causality { step: usize, reference: usize },
    /// A display index appears more than once.
    Duplicate { display_index: usize },
    /// A display index in `[0, n)` is missing.
    Missing { display_index: usize },
    /// Reference fields inconsistent with the frame type.
    TypeRefMismatch { step: usize, frame_type: FrameType },
    /// A step references itself.
    SelfReference { step: usize },
    /// Frame types do not match the configuration's shape.
    ConfigShape { step: usize, expected: &'static str },
}

impl std::fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleViolation::Causality { step, reference } => {
                write!(f, "step {step} references display {reference} before it is coded")
            }
            ScheduleViolation::Duplicate { display_index } => {
                write!(f, "display index {display_index} coded more than once")
            }
            ScheduleViolation::Missing { display_index } => {
                write!(f, "display index {display_index} never coded")
            }
            ScheduleViolation::TypeRefMismatch { step, frame_type } => {
                write!(f, "step {step}: references inconsistent with type {frame_type}")
            }
            ScheduleViolation::SelfReference { step } => {
                write!(f, "step {step} references itself")
            }
            ScheduleViolation::ConfigShape { step, expected } => {
                write!(f, "step {step} violates config shape: expected {expected}")
            }
        }
    }
}

/// Build a coding schedule for `n_frames`.
///
/// `intra_period` and `gop_size` only constrain the RA configuration; for RA
/// the GOP size must be a power of two dividing the intra period.
pub fn build_schedule(
    config: ScheduleConfig,
    n_frames: usize,
    intra_period: usize,
    gop_size: usize,
) -> Result<CodingSchedule, ScheduleError> {
    if n_frames == 0 {
        return Err(ScheduleError::EmptySequence);
    }
    let steps = match config {
        ScheduleConfig::Ai => (0..n_frames)
            .map(|i| CodingStep {
                display_index: i,
                frame_type: FrameType::I,
                past_ref: None,
                future_ref: None,
            })
            .collect(),
        ScheduleConfig::Ldp => p_chain(0, n_frames),
        ScheduleConfig::Ra => {
            if gop_size == 0 || !gop_size.is_power_of_two() {
                return Err(ScheduleError::GopNotPowerOfTwo(gop_size));
            }
            if intra_period == 0 || intra_period % gop_size != 0 {
                return Err(ScheduleError::IntraPeriodMismatch { intra_period, gop_size });
            }
            build_ra(n_frames, intra_period, gop_size)
        }
    };
    Ok(CodingSchedule {
        steps,
        config,
        intra_period,
        gop_size,
    })
}

fn p_chain(start: usize, n_frames: usize) -> Vec<CodingStep> {
    (start..n_frames)
        .map(|i| {
            if i == 0 {
                CodingStep {
                    display_index: 0,
                    frame_type: FrameType::I,
                    past_ref: None,
                    future_ref: None,
                }
            } else {
                CodingStep {
                    display_index: i,
                    frame_type: FrameType::P,
                    past_ref: Some(i - 1),
                    future_ref: None,
                }
            }
        })
        .collect()
}

fn build_ra(n_frames: usize, intra_period: usize, gop_size: usize) -> Vec<CodingStep> {
    let mut steps = Vec::with_capacity(n_frames);
    steps.push(CodingStep {
        display_index: 0,
        frame_type: FrameType::I,
        past_ref: None,
        future_ref: None,
    });
    // Anchors sit at multiples of gop_size; those on the intra period are I.
    let mut last_anchor = 0usize;
    let mut anchor = gop_size;
    while anchor < n_frames {
        let frame_type = if anchor % intra_period == 0 {
            FrameType::I
        } else {
            FrameType::P
        };
        steps.push(CodingStep {
            display_index: anchor,
            frame_type,
            past_ref: (frame_type == FrameType::P).then_some(last_anchor),
            future_ref: None,
        });
        dyadic_fill(last_anchor, anchor, &mut steps);
        last_anchor = anchor;
        anchor += gop_size;
    }
    // Trailing frames after the last complete GOP: P chain.
    for i in last_anchor + 1..n_frames {
        steps.push(CodingStep {
            display_index: i,
            frame_type: FrameType::P,
            past_ref: Some(i - 1),
            future_ref: None,
        });
    }
    steps
}

/// Emit the dyadic B pyramid strictly inside `(lo, hi)`, highest level first.
fn dyadic_fill(lo: usize, hi: usize, steps: &mut Vec<CodingStep>) {
    if hi - lo < 2 {
        return;
    }
    let mid = (lo + hi) / 2;
    steps.push(CodingStep {
        display_index: mid,
        frame_type: FrameType::B,
        past_ref: Some(lo),
        future_ref: Some(hi),
    });
    dyadic_fill(lo, mid, steps);
    dyadic_fill(mid, hi, steps);
}

/// Check every schedule invariant; returns all violations found.
pub fn validate_schedule(schedule: &CodingSchedule) -> Vec<ScheduleViolation> {
    let mut violations = Vec::new();
    let n = schedule.steps.len();
    let mut coded: HashSet<usize> = HashSet::new();

    for (pos, step) in schedule.steps.iter().enumerate() {
        // Type / reference consistency.
        let refs_ok = match step.frame_type {
            FrameType::I => step.past_ref.is_none() && step.future_ref.is_none(),
            FrameType::P => step.past_ref.is_some() && step.future_ref.is_none(),
            FrameType::B => step.past_ref.is_some() && step.future_ref.is_some(),
        };
        if !refs_ok {
            violations.push(ScheduleViolation::TypeRefMismatch {
                step: pos,
                frame_type: step.frame_type,
            });
        }
        for reference in [step.past_ref, step.future_ref].into_iter().flatten() {
            if reference == step.display_index {
                violations.push(ScheduleViolation::SelfReference { step: pos });
            } else if !coded.contains(&reference) {
                violations.push(ScheduleViolation::Causality { step: pos, reference });
            }
        }
        if !coded.insert(step.display_index) {
            violations.push(ScheduleViolation::Duplicate {
                display_index: step.display_index,
            });
        }
        // Config shape.
        match schedule.config {
            ScheduleConfig::Ai => {
                if step.frame_type != FrameType::I {
                    violations.push(ScheduleViolation::ConfigShape {
                        step: pos,
                        expected: "AI schedules contain only I frames",
                    });
                }
            }
            ScheduleConfig::Ldp => {
                let want = if pos == 0 { FrameType::I } else { FrameType::P };
                if step.frame_type != want {
                    violations.push(ScheduleViolation::ConfigShape {
                        step: pos,
                        expected: "LDP is one I frame followed by P frames",
                    });
                }
            }
            ScheduleConfig::Ra => {}
        }
    }
    for display_index in 0..n {
        if !coded.contains(&display_index) {
            violations.push(ScheduleViolation::Missing { display_index });
        }
    }
    violations
}

impl CodingSchedule {
    pub fn n_frames(&self) -> usize {
        self.steps.len()
    }

    /// Count steps of a given type.
    pub fn count(&self, ft: FrameType) -> usize {
        self.steps.iter().filter(|s| s.frame_type == ft).count()
    }

    /// Line-oriented text form: `coding_pos display_idx type past future`,
    /// with `-` for absent references.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (pos, step) in self.steps.iter().enumerate() {
            let fmt_ref = |r: Option<usize>| r.map_or("-".to_string(), |v| v.to_string());
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                pos,
                step.display_index,
                step.frame_type.letter(),
                fmt_ref(step.past_ref),
                fmt_ref(step.future_ref),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ai_schedule_is_all_intra_in_display_order() {
        let s = build_schedule(ScheduleConfig::Ai, 3, 0, 0).unwrap();
        let got: Vec<_> = s.steps.iter().map(|st| (st.display_index, st.frame_type)).collect();
        assert_eq!(
            got,
            vec![(0, FrameType::I), (1, FrameType::I), (2, FrameType::I)]
        );
        assert!(validate_schedule(&s).is_empty());
    }

    #[test]
    fn ldp_schedule_is_an_i_frame_then_p_chain() {
        let s = build_schedule(ScheduleConfig::Ldp, 4, 0, 0).unwrap();
        assert_eq!(s.steps[0].frame_type, FrameType::I);
        for i in 1..4 {
            assert_eq!(s.steps[i].frame_type, FrameType::P);
            assert_eq!(s.steps[i].past_ref, Some(i - 1));
            assert_eq!(s.steps[i].display_index, i);
        }
        assert!(validate_schedule(&s).is_empty());
    }

    #[test]
    fn ra_five_frames_matches_dyadic_construction() {
        let s = build_schedule(ScheduleConfig::Ra, 5, 4, 4).unwrap();
        let got: Vec<_> = s
            .steps
            .iter()
            .map(|st| (st.display_index, st.frame_type, st.past_ref, st.future_ref))
            .collect();
        assert_eq!(
            got,
            vec![
                (0, FrameType::I, None, None),
                (4, FrameType::I, None, None),
                (2, FrameType::B, Some(0), Some(4)),
                (1, FrameType::B, Some(0), Some(2)),
                (3, FrameType::B, Some(2), Some(4)),
            ]
        );
        assert!(validate_schedule(&s).is_empty());
    }

    #[test]
    fn ra_with_p_anchors_and_trailing_chain() {
        // intra_period 8, gop 4: anchor at 4 is P; frames 9.. are trailing.
        let s = build_schedule(ScheduleConfig::Ra, 11, 8, 4).unwrap();
        assert!(validate_schedule(&s).is_empty());
        let anchor4 = s.steps.iter().find(|st| st.display_index == 4).unwrap();
        assert_eq!(anchor4.frame_type, FrameType::P);
        assert_eq!(anchor4.past_ref, Some(0));
        let anchor8 = s.steps.iter().find(|st| st.display_index == 8).unwrap();
        assert_eq!(anchor8.frame_type, FrameType::I);
        for idx in [9, 10] {
            let st = s.steps.iter().find(|st| st.display_index == idx).unwrap();
            assert_eq!(st.frame_type, FrameType::P);
            assert_eq!(st.past_ref, Some(idx - 1));
        }
    }

    #[test]
    fn ra_rejects_bad_gop_combinations() {
        assert!(matches!(
            build_schedule(ScheduleConfig::Ra, 5, 4, 3),
            Err(ScheduleError::GopNotPowerOfTwo(3))
        ));
        assert!(matches!(
            build_schedule(ScheduleConfig::Ra, 5, 6, 4),
            Err(ScheduleError::IntraPeriodMismatch { .. })
        ));
    }

    #[test]
    fn validator_flags_constructed_counterexamples() {
        // B frame whose future reference is coded later.
        let bad = CodingSchedule {
            steps: vec![
                CodingStep {
                    display_index: 0,
                    frame_type: FrameType::I,
                    past_ref: None,
                    future_ref: None,
                },
                CodingStep {
                    display_index: 1,
                    frame_type: FrameType::B,
                    past_ref: Some(0),
                    future_ref: Some(2),
                },
                CodingStep {
                    display_index: 2,
                    frame_type: FrameType::P,
                    past_ref: Some(0),
                    future_ref: None,
                },
            ],
            config: ScheduleConfig::Ra,
            intra_period: 4,
            gop_size: 4,
        };
        let v = validate_schedule(&bad);
        assert!(v
            .iter()
            .any(|x| matches!(x, ScheduleViolation::Causality { reference: 2, .. })));

        // Missing display index 2 of 4.
        let missing = CodingSchedule {
            steps: vec![
                CodingStep {
                    display_index: 0,
                    frame_type: FrameType::I,
                    past_ref: None,
                    future_ref: None,
                },
                CodingStep {
                    display_index: 1,
                    frame_type: FrameType::P,
                    past_ref: Some(0),
                    future_ref: None,
                },
                CodingStep {
                    display_index: 3,
                    frame_type: FrameType::P,
                    past_ref: Some(1),
                    future_ref: None,
                },
                CodingStep {
                    display_index: 3,
                    frame_type: FrameType::P,
                    past_ref: Some(1),
                    future_ref: None,
                },
            ],
            config: ScheduleConfig::Ldp,
            intra_period: 0,
            gop_size: 0,
        };
        let v = validate_schedule(&missing);
        assert!(v
            .iter()
            .any(|x| matches!(x, ScheduleViolation::Missing { display_index: 2 })));
        assert!(v
            .iter()
            .any(|x| matches!(x, ScheduleViolation::Duplicate { display_index: 3 })));
    }

    #[test]
    fn frame_type_counts_match_closed_forms() {
        for n in 1..40 {
            let ai = build_schedule(ScheduleConfig::Ai, n, 0, 0).unwrap();
            assert_eq!(ai.count(FrameType::I), n);
            let ldp = build_schedule(ScheduleConfig::Ldp, n, 0, 0).unwrap();
            assert_eq!(ldp.count(FrameType::I), 1);
            assert_eq!(ldp.count(FrameType::P), n - 1);
        }
        // RA closed form applies when n_frames-1 is a multiple of gop_size.
        for gop_pow in 1..=3usize {
            let gop = 1 << gop_pow;
            for mult in [1usize, 2, 4] {
                let intra_period = gop * mult;
                for gops in 1..6usize {
                    let n = gops * gop + 1;
                    let s = build_schedule(ScheduleConfig::Ra, n, intra_period, gop).unwrap();
                    assert!(validate_schedule(&s).is_empty());
                    assert_eq!(s.count(FrameType::I), n.div_ceil(intra_period), "n={n} ip={intra_period} gop={gop}");
                }
            }
        }
    }

    #[test]
    fn text_form_round_trips_the_ra_example() {
        let s = build_schedule(ScheduleConfig::Ra, 5, 4, 4).unwrap();
        let text = s.to_text();
        assert_eq!(
            text,
            "0 0 I - -\n1 4 I - -\n2 2 B 0 4\n3 1 B 0 2\n4 3 B 2 4\n"
        );
    }
}
