//! Decode a raw head output into boxes, suppress overlaps, and score noisy
//! predictions against ground truth with both AP variants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyissimo::head::{decode, mean_ap, nms, write_jsonl, ApMethod, DetectionBox, GroundTruthBox, HeadConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = HeadConfig { grid: 4, boxes: 2, classes: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw: Vec<f64> = (0..cfg.output_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let boxes = decode(&raw, &cfg, 0.25)?;
    let kept = nms(&boxes, 0.5);
    println!("decoded {} boxes, {} after suppression", boxes.len(), kept.len());
    print!("{}", write_jsonl(&kept[..kept.len().min(3)]));

    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for img in 0..20 {
        for _ in 0..rng.gen_range(1..4) {
            let g = GroundTruthBox {
                image_id: format!("img{img}"),
                class_id: rng.gen_range(0..3),
                cx: rng.gen_range(0.2..0.8),
                cy: rng.gen_range(0.2..0.8),
                w: rng.gen_range(0.1..0.4),
                h: rng.gen_range(0.1..0.4),
            };
            if rng.gen_bool(0.85) {
                let j = rng.gen_range(-0.04..0.04);
                dets.push(DetectionBox {
                    image_id: g.image_id.clone(),
                    class_id: g.class_id,
                    cx: g.cx + j,
                    cy: g.cy - j,
                    w: g.w,
                    h: g.h,
                    score: rng.gen_range(0.3..1.0),
                });
            }
            gts.push(g);
        }
        dets.push(DetectionBox { image_id: format!("img{img}"), class_id: rng.gen_range(0..3), cx: 0.5, cy: 0.5, w: 0.2, h: 0.2, score: rng.gen_range(0.0..0.6) });
    }
    for method in [ApMethod::ElevenPoint, ApMethod::AllPoint] {
        let report = mean_ap(&dets, &gts, 0.5, method)?;
        println!("{method:?}: mAP {:.4}, per class {:?}", report.map, report.per_class);
    }
    Ok(())
}
