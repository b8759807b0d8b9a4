use proptest::prelude::*;
use tinyissimo::container::{Container, Data, DType, Record};
use tinyissimo::head::{iou, BBox};
use tinyissimo::image::Image;
use tinyissimo::model::{build_graph, count_params, NetworkConfig};
use tinyissimo::perf::{dominates, pareto, ParetoPoint};
use tinyissimo::tiler::{halo_sum, tile_ranges};

fn record() -> impl Strategy<Value = Record> {
    ("[a-z.0-9]{1,12}", 0usize..4, prop::collection::vec(any::<i64>(), 0..20)).prop_map(|(name, kind, raw)| {
        let n = raw.len();
        let (dtype, data) = match kind {
            0 => (DType::Int8Weights, Data::I8(raw.iter().map(|&v| v as i8).collect())),
            1 => (DType::Int32Bias, Data::I32(raw.iter().map(|&v| v as i32).collect())),
            2 => (DType::RequantAdd, Data::I64(raw)),
            _ => (DType::Scale, Data::F64(raw.iter().map(|&v| v as f64 / 7.0).collect())),
        };
        Record::new(name, dtype, [n, 1, 1, 1], data)
    })
}

proptest! {
    #[test]
    fn container_round_trip(records in prop::collection::vec(record(), 0..8)) {
        let c = Container { records };
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back, c);
    }

    #[test]
    fn image_round_trip(w in 1usize..20, h in 1usize..20, rgb in any::<bool>(), seed in any::<u64>()) {
        let channels = if rgb { 3 } else { 1 };
        let pixels = (0..w * h * channels).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let img = Image { width: w, height: h, channels, pixels };
        prop_assert_eq!(Image::parse(&img.encode()).unwrap(), img.clone());
        let t = img.to_input(8, 3).unwrap();
        prop_assert_eq!(t.data.len(), 3 * 64);
    }

    #[test]
    fn tiles_cover_axis(len in 1usize..300, t in 1usize..300, pad in 0usize..4) {
        let t = t.min(len);
        let ranges: Vec<_> = tile_ranges(len, t).collect();
        prop_assert_eq!(ranges.first().unwrap().0, 0);
        prop_assert_eq!(ranges.last().unwrap().1, len);
        prop_assert!(ranges.windows(2).all(|w| w[0].1 == w[1].0));
        let halo = halo_sum(len, t, pad);
        prop_assert!(halo >= len);
        prop_assert!(halo <= len + 2 * pad * ranges.len());
        if pad == 0 {
            prop_assert_eq!(halo, len);
        }
    }

    #[test]
    fn pareto_front_is_exactly_the_undominated_set(
        pts in prop::collection::vec((0u8..20, 0u8..20), 0..40)
    ) {
        let points: Vec<ParetoPoint> = pts
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| ParetoPoint { label: i.to_string(), latency_ms: a as f64, energy_uj: b as f64 })
            .collect();
        let front = pareto(&points).unwrap();
        for p in &points {
            let on_front = front.contains(p);
            let dominated = points.iter().any(|q| dominates(q, p));
            prop_assert_eq!(on_front, !dominated);
        }
        prop_assert!(front.windows(2).all(|w| w[0].latency_ms <= w[1].latency_ms && w[0].energy_uj >= w[1].energy_uj));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in (0.0..1.0f64, 0.0..1.0f64, 0.01..1.0f64, 0.01..1.0f64),
                                    b in (0.0..1.0f64, 0.0..1.0f64, 0.01..1.0f64, 0.01..1.0f64)) {
        let a = BBox { cx: a.0, cy: a.1, w: a.2, h: a.3 };
        let b = BBox { cx: b.0, cy: b.1, w: b.2, h: b.3 };
        let x = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parameters_are_affine_in_classes(classes in 1usize..40, kernel in prop::sample::select(vec![1usize, 3, 5, 7]), res in prop::sample::select(vec![64usize, 88, 112, 224])) {
        let p = |c| count_params(&build_graph(&NetworkConfig::new(c, kernel, res)).unwrap());
        let fc_in = 128 * (res / 32) * (res / 32);
        prop_assert_eq!(p(classes + 1) - p(classes), 16 * (fc_in + 1));
    }
}
