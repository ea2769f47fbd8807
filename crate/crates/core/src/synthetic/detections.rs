use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backend::SimParams;
use super::scene::SceneScript;
use crate::error::Result;
use crate::mask::BBox;
use crate::trajectory::Detection;

/// Noisy detector output for one frame: ground-truth rectangles with
/// uniform jitter, confidence `0.95 - 0.5 * occluded_fraction`, and random
/// dropout. The random stream depends only on `(seed, frame)`.
pub fn generate_detections(
    script: &SceneScript,
    frame: u32,
    params: &SimParams,
) -> Result<Vec<Detection>> {
    let gt = script.render_ground_truth(frame)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(u64::from(frame));
    let noise = i64::from(params.det_noise);

    let mut out = Vec::new();
    for (_, obj) in gt {
        // draw everything up front so dropout does not shift later objects
        let drop = rng.random::<f64>() < params.det_dropout;
        let mut jitter = [0i64; 4];
        for j in &mut jitter {
            *j = rng.random_range(-noise..=noise);
        }
        if drop {
            continue;
        }
        let b = obj.bbox;
        let Some(bbox) = BBox::clipped(
            i64::from(b.x) + jitter[0],
            i64::from(b.y) + jitter[1],
            i64::from(b.w) + jitter[2],
            i64::from(b.h) + jitter[3],
            script.grid,
        ) else {
            continue;
        };
        let confidence = (0.95 - 0.5 * obj.occluded_fraction).clamp(0.0, 1.0);
        out.push(Detection::new(bbox, confidence, obj.class_id)?);
    }
    Ok(out)
}
