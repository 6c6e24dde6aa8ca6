use proptest::prelude::*;

use qnet_autoconf::pubsub::{backoff_update, Conflict, Schedule};
use qnet_autoconf::simkernel::{corrupt_bits, ErrorModel, Kernel, SimTime};
use qnet_autoconf::tdc::{decode_stream, encode_identifier, StreamDecoder};

fn conflict() -> impl Strategy<Value = Conflict> {
    prop_oneof![
        Just(Conflict::SameDurationPublished),
        Just(Conflict::SameDetectionPair),
        Just(Conflict::VerifyConflict),
        Just(Conflict::QuietPeriod),
    ]
}

proptest! {
    #[test]
    fn stream_decoder_matches_batch(bits in prop::collection::vec(any::<bool>(), 0..400), l in 1u32..=6) {
        let mut dec = StreamDecoder::new(l);
        let online: Vec<u64> = bits.iter().filter_map(|&b| dec.push(b)).collect();
        let batch: Vec<u64> = decode_stream(&bits, l).into_iter().map(|(_, v)| v).collect();
        prop_assert_eq!(online, batch);
    }

    #[test]
    fn repeated_frames_after_dark(l in 1u32..=12, seed in any::<u64>(), k in 1usize..6, dark in 0usize..20) {
        let v = seed % ((1u64 << l) - 1);
        let frame = encode_identifier(v, l).unwrap();
        let mut bits = vec![false; dark];
        for _ in 0..k {
            bits.extend_from_slice(&frame);
        }
        let got: Vec<u64> = decode_stream(&bits, l).into_iter().map(|(_, x)| x).collect();
        prop_assert_eq!(got, vec![v; k]);
    }

    #[test]
    fn backoff_stays_in_bounds(seq in prop::collection::vec(conflict(), 0..60), t_init in 1u64..32, d_init in 1u64..16) {
        let t_max = 256;
        let mut s = Schedule::new(t_init, d_init, t_max, 1);
        for c in seq {
            s = backoff_update(s, c);
            prop_assert!(s.t <= t_max);
            prop_assert!(s.d >= 1 && s.d <= t_max);
            prop_assert!(s.t_hi >= t_init && s.t_hi <= t_max);
            prop_assert!(s.d_hi >= d_init && s.d_hi <= t_max);
        }
    }

    #[test]
    fn kernel_orders_events(times in prop::collection::vec(0u64..50, 1..100)) {
        let mut k = Kernel::new();
        for (i, &t) in times.iter().enumerate() {
            k.schedule(SimTime(t), i).unwrap();
        }
        let mut last = (0u64, 0usize);
        let mut first = true;
        while let Ok(ev) = k.step() {
            let key = (ev.time.ticks(), ev.event);
            prop_assert!(first || key > last);
            prop_assert_eq!(times[ev.event], ev.time.ticks());
            first = false;
            last = key;
        }
        prop_assert!(k.is_empty());
    }

    #[test]
    fn noiseless_channel_is_identity(bits in prop::collection::vec(any::<bool>(), 0..200), seed in any::<u64>()) {
        prop_assert_eq!(corrupt_bits(&bits, &ErrorModel::new(0.0, seed), 3), bits);
    }
}

#[test]
fn flip_rate_matches_p() {
    let bits = vec![false; 200_000];
    for p in [0.01, 0.05, 0.2] {
        let flips = corrupt_bits(&bits, &ErrorModel::new(p, 1), 0).iter().filter(|&&b| b).count() as f64;
        let rate = flips / bits.len() as f64;
        assert!((rate - p).abs() < 4.0 * (p * (1.0 - p) / bits.len() as f64).sqrt(), "p={p} rate={rate}");
    }
}
