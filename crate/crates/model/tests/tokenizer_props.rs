mod common;

use common::random_video;
use h2r_model::TokenizerConfig;
use proptest::prelude::*;

#[test]
fn token_layout_matches_pixel_indexing() {
    let tk = TokenizerConfig::default();
    let v = random_video(3, 9, 16, 24);
    let tok = tk.encode(&v).unwrap();
    assert_eq!((tok.grid.t, tok.grid.h, tok.grid.w), (3, 2, 3));
    assert_eq!(tok.channels, 768);
    for i in 0..tok.grid.len() {
        let (lt, gy, gx) = tok.grid.coords(i);
        for s in 0..4 {
            let src = if lt == 0 { 0 } else { 1 + (lt - 1) * 4 + s };
            for py in 0..8 {
                for px in 0..8 {
                    let rgb = v.pixel(src, gy * 8 + py, gx * 8 + px);
                    for ch in 0..3 {
                        assert_eq!(tok.token(i)[s * 192 + py * 24 + px * 3 + ch], rgb[ch]);
                    }
                }
            }
        }
    }
}

#[test]
fn nonconforming_shapes_are_named() {
    let tk = TokenizerConfig::default();
    let err = tk.encode(&random_video(0, 8, 16, 16)).unwrap_err().to_string();
    assert!(err.contains('8'), "{err}");
    let err = tk.encode(&random_video(0, 5, 12, 16)).unwrap_err().to_string();
    assert!(err.contains("12"), "{err}");
}

#[test]
fn decode_averages_disagreeing_copies_of_first_frame() {
    let tk = TokenizerConfig { patch: 1, temporal: 3 };
    let v = random_video(1, 4, 1, 1);
    let mut tok = tk.encode(&v).unwrap();
    tok.data[0] = 0.0;
    tok.data[3] = 0.3;
    tok.data[6] = 0.6;
    let back = tk.decode(&tok).unwrap();
    assert!((back.pixel(0, 0, 0)[0] - 0.3).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>(), k in 0usize..4, gh in 1usize..3, gw in 1usize..3, patch in prop::sample::select(vec![2usize, 4, 8]), temporal in 1usize..5) {
        let tk = TokenizerConfig { patch, temporal };
        let v = random_video(seed, 1 + k * temporal, gh * patch, gw * patch);
        let tok = tk.encode(&v).unwrap();
        prop_assert_eq!(tok.grid.len(), (1 + k) * gh * gw);
        let back = tk.decode(&tok).unwrap();
        prop_assert_eq!(back.data(), v.data());
    }
}
