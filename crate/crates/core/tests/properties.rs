//! Property tests over the spec invariants that hold for arbitrary inputs.

use proptest::prelude::*;

use eegscreen::edf::{parse_edf, write_edf, Channel, EdfWriteOptions, RawRecording, CHANNEL_LABELS};
use eegscreen::eval::metrics::auc;
use eegscreen::eval::stats::fdr_adjust;
use eegscreen::features::bands::BandTable;
use eegscreen::features::multitaper::{multitaper_band_power, DEFAULT_NW, DEFAULT_TAPERS};
use eegscreen::preprocess::{common_average_reference, Frame, FRAME_LEN};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edf_roundtrip_stays_within_one_quantum(
        seed in 0u64..1000,
        amplitude in 1.0f64..3000.0,
        rate in prop::sample::select(vec![200u32, 250, 400, 500]),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let n = rate as usize * 2;
        let channels: Vec<Channel> = CHANNEL_LABELS
            .iter()
            .map(|label| Channel {
                label: label.to_string(),
                samples: (0..n).map(|_| rng.gen_range(-amplitude..amplitude)).collect(),
                rate: rate as f64,
            })
            .collect();
        let rec = RawRecording { channels, duration: 2.0, source_path: String::new() };
        let bytes = write_edf(&rec, &EdfWriteOptions::default()).unwrap();
        let (header, parsed) = parse_edf(&bytes).unwrap();
        for ((orig, sig), back) in rec.channels.iter().zip(&header.signals).zip(&parsed.channels) {
            let quantum = (sig.physical_max - sig.physical_min)
                / (sig.digital_max - sig.digital_min) as f64;
            for (a, b) in orig.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= quantum);
            }
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps(
        scores in prop::collection::vec(-5.0f64..5.0, 4..40),
        labels_seed in 0u64..1000,
        scale in 0.1f64..3.0,
        shift in -2.0f64..2.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(labels_seed);
        let labels: Vec<u8> = scores.iter().map(|_| rng.gen_range(0..2) as u8).collect();
        // Strictly increasing map: affine followed by exp plus identity.
        let warped: Vec<f64> = scores.iter().map(|&s| (scale * s + shift).exp() + s).collect();
        match (auc(&scores, &labels), auc(&warped, &labels)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "disagreement {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn fdr_is_monotone_bounded_and_order_free(
        p in prop::collection::vec(0.0f64..=1.0, 1..40),
    ) {
        let q = fdr_adjust(&p).unwrap();
        for (pi, qi) in p.iter().zip(&q) {
            prop_assert!(qi >= pi && *qi <= 1.0);
        }
        for i in 0..p.len() {
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    prop_assert!(q[i] <= q[j] + 1e-12);
                }
            }
        }
        // Adjusting a reordered vector reorders the adjusted values.
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.reverse();
        let reordered: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let q2 = fdr_adjust(&reordered).unwrap();
        for (k, &i) in idx.iter().enumerate() {
            prop_assert!((q2[k] - q[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn car_output_always_has_zero_column_means(
        seed in 0u64..1000,
        len in 4usize..64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut channels: Vec<Vec<f64>> = (0..19)
            .map(|_| (0..len).map(|_| rng.gen_range(-100.0..100.0)).collect())
            .collect();
        common_average_reference(&mut channels);
        for t in 0..len {
            let mean: f64 = channels.iter().map(|row| row[t]).sum::<f64>() / 19.0;
            prop_assert!(mean.abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn band_power_normalization_is_gain_invariant(seed in 0u64..100, gain in 0.2f64..10.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let data: Vec<f32> = (0..19 * FRAME_LEN)
            .map(|_| rng.gen_range(-30.0f64..30.0) as f32)
            .collect();
        let frame = Frame { data: data.clone(), index: 0 };
        let scaled = Frame {
            data: data.iter().map(|&v| (v as f64 * gain) as f32).collect(),
            index: 0,
        };
        let bands = BandTable::standard();
        let a = multitaper_band_power(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        let b = multitaper_band_power(&scaled, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        let sum: f64 = a.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        for (x, y) in a.iter().zip(&b) {
            // f32 storage of the scaled frame rounds the inputs, so the
            // tolerance is looser than the f64 identity.
            prop_assert!((x - y).abs() < 1e-5);
        }
    }
}
