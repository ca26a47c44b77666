//! Fixtures shared by the benchmarks in `benches/`.

use std::sync::Arc;

use vosagent_core::scenario::synthesize_narrative;
use vosagent_core::{generate_scenario, BinaryMask, GenerationParams, Plan, PlannerBackend, RuleBasedPlanner, Scenario};

/// Filled axis-aligned rectangle `[x0, x1) x [y0, y1)`.
pub fn rect_mask(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
    let px: Vec<bool> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            x >= x0 && x < x1 && y >= y0 && y < y1
        })
        .collect();
    BinaryMask::encode(w, h, &px).expect("valid size")
}

/// A generated scenario and the rule-based plan for its first query.
pub fn planned_scenario(seed: u64) -> (Arc<Scenario>, Plan) {
    let s = generate_scenario(seed, &GenerationParams::default()).expect("generation succeeds");
    let plan = RuleBasedPlanner
        .plan(&s.queries[0], &synthesize_narrative(&s))
        .expect("planning succeeds");
    (Arc::new(s), plan)
}
