//! Generator-wide invariants over many seeds, plus the fold-oracle check
//! for over-compositing.

use layerflow_imaging::{
    over_composite, rgba_to_rgb, synth_stack, LayerStack, RgbImage, SynthConfig,
};
use proptest::prelude::*;

/// Reference fold: flatten one layer at a time into a whole intermediate
/// image, instead of the per-pixel inner loop the library uses.
fn fold_composite(stack: &LayerStack) -> RgbImage {
    let (w, h) = (stack.width(), stack.height());
    let mut acc = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let a = stack.background.get(3, y, x);
            for c in 0..3 {
                acc.set(c, y, x, stack.background.get(c, y, x) * a);
            }
        }
    }
    for fg in &stack.foregrounds {
        let mut next = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let fa = fg.image.get(3, y, x);
                for c in 0..3 {
                    next.set(c, y, x, fg.image.get(c, y, x) * fa + acc.get(c, y, x) * (1.0 - fa));
                }
            }
        }
        acc = next;
    }
    acc.clamp_unit();
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn generated_stacks_satisfy_all_invariants(seed in 0u64..100_000, layers in 1usize..5) {
        let config = SynthConfig { n_layers: layers, ..Default::default() };
        let stack = synth_stack(seed, &config).unwrap();
        stack.validate().unwrap();
        prop_assert_eq!(stack.foregrounds.len(), layers - 1);
        let recomposed = over_composite(&stack).unwrap();
        for (a, b) in stack.composite.data().iter().zip(recomposed.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_at_a_time_fold_matches_library(seed in 0u64..100_000) {
        let stack = synth_stack(seed, &SynthConfig::default()).unwrap();
        let folded = fold_composite(&stack);
        let library = over_composite(&stack).unwrap();
        prop_assert_eq!(folded.data(), library.data());
    }

    #[test]
    fn gray_flatten_is_affine_in_alpha(rgb in 0.0f64..1.0, alpha in 0.0f64..1.0) {
        let img = layerflow_imaging::RgbaImage::from_planes(
            1, 1, vec![rgb, rgb, rgb, alpha],
        ).unwrap();
        let out = rgba_to_rgb(&img);
        let expect = rgb * alpha + 0.5 * (1.0 - alpha);
        prop_assert!((out.get(0, 0, 0) - expect).abs() < 1e-15);
    }
}
