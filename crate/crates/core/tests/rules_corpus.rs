mod oracles;

use cpforge::content::SegmentGrid;
use cpforge::rules::{rule_filter, RuleId};

#[test]
fn corpus_covers_every_rule_twice() {
    let fixtures = oracles::load_rule_fixtures(&oracles::fixture_dir());
    for id in RuleId::ALL {
        let hits = fixtures.iter().filter(|f| f.expected.iter().any(|e| e == id.as_str())).count();
        assert!(hits >= 2, "{id} covered by {hits} fixtures");
    }
    assert!(fixtures.iter().any(|f| f.expected.is_empty()));
}

#[test]
fn fixtures_get_exactly_the_expected_verdicts() {
    for f in oracles::load_rule_fixtures(&oracles::fixture_dir()) {
        let g = SegmentGrid::from_rows(&f.rows).unwrap();
        let v = rule_filter(&g);
        let got: Vec<&str> = v.violations.iter().map(|r| r.as_str()).collect();
        assert_eq!(got, f.expected, "{}", f.name);
        assert_eq!(v.pass, f.expected.is_empty(), "{}", f.name);
    }
}

#[test]
fn fixture_reachability_matches_the_jump_graph() {
    for f in oracles::load_rule_fixtures(&oracles::fixture_dir()) {
        let g = SegmentGrid::from_rows(&f.rows).unwrap();
        assert_eq!(
            cpforge::rules::is_traversable(&g),
            oracles::jump_graph_reachable(&f.rows),
            "{}",
            f.name
        );
        assert_eq!(
            oracles::jump_graph_reachable(&f.rows),
            !f.expected.iter().any(|e| e == "R5_UNREACHABLE"),
            "{}",
            f.name
        );
    }
}
