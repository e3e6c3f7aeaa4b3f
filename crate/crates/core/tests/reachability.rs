mod oracles;

use cpforge::content::SegmentGrid;
use cpforge::rng::item_rng;
use cpforge::rules::is_traversable;
use cpforge::sampler::{sample_segment, SamplerParams};

fn stress_params() -> SamplerParams {
    SamplerParams {
        gap_prob: 0.15,
        max_gap: 8,
        pipe_prob: 0.15,
        platform_prob: 0.8,
        elev_step_prob: 0.6,
        ..Default::default()
    }
}

#[test]
fn sampled_segments_agree_with_exhaustive_search() {
    let p = stress_params();
    let mut unreachable = 0;
    for id in 0..500 {
        let g = sample_segment(&p, &mut item_rng(99, id));
        let rows = g.to_rows();
        let expected = oracles::jump_graph_reachable(&rows);
        assert_eq!(is_traversable(&g), expected, "segment {id}\n{}", rows.join("\n"));
        unreachable += usize::from(!expected);
    }
    assert!(unreachable > 25, "stress set should include unreachable segments ({unreachable})");
}

#[test]
fn noisy_grids_agree_with_exhaustive_search() {
    let mut rng = oracles::XorShift(0x9E37_79B9_7F4A_7C15);
    let mut both = [0usize; 2];
    for _ in 0..1000 {
        let rows = oracles::noisy_rows(&mut rng);
        let g = SegmentGrid::from_rows(&rows).unwrap();
        let expected = oracles::jump_graph_reachable(&rows);
        assert_eq!(is_traversable(&g), expected, "\n{}", rows.join("\n"));
        both[usize::from(expected)] += 1;
    }
    assert!(both[0] > 50 && both[1] > 50, "{both:?}");
}
