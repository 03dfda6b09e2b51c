mod support;

use fimscan::context::{build_brace_index, fixed_context, mcs_context, select_context, shrink, Strategy};
use fimscan::corpus::SourceFile;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{oracle_mcs, oracle_pairs, random_braced_file};

fn file_from_seed(seed: u64, max_lines: usize) -> SourceFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SourceFile::from_text("gen.c", &random_braced_file(&mut rng, max_lines))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn brace_index_matches_oracle(seed: u64) {
        let file = file_from_seed(seed, 80);
        let index = build_brace_index(&file);
        let mut got: Vec<(usize, usize)> = index.pairs.iter().map(|p| (p.open_line, p.close_line)).collect();
        got.sort();
        prop_assert_eq!(got, oracle_pairs(&file.to_text()));
        prop_assert!(index.unmatched_opens.is_empty());
        prop_assert!(index.unmatched_closes.is_empty());
    }

    #[test]
    fn mcs_matches_oracle(seed: u64, limit in 2usize..40) {
        let file = file_from_seed(seed, 80);
        let index = build_brace_index(&file);
        for line in 1..=file.line_count() {
            let got = mcs_context(&file, &index, line, limit, 7).unwrap();
            prop_assert_eq!(got, oracle_mcs(&file, line, limit, 7), "line {}", line);
        }
    }

    #[test]
    fn mcs_window_never_exceeds_cap(seed: u64, limit in 2usize..40) {
        let file = file_from_seed(seed, 80);
        let index = build_brace_index(&file);
        for line in 1..=file.line_count() {
            let w = mcs_context(&file, &index, line, limit, 7).unwrap();
            if let Some((o, c)) = w.mcs_span {
                prop_assert!(c - o < limit);
                prop_assert!(o <= line && line <= c);
                prop_assert_eq!(w.suffix_end(), c);
                prop_assert!(o - w.prefix_start <= 10);
            }
        }
    }

    #[test]
    fn fixed_window_bounds(lines in 1usize..300, total in 2usize..600, pick in any::<prop::sample::Index>()) {
        let text: String = (1..=lines).map(|i| format!("l{i}\n")).collect();
        let file = SourceFile::from_text("f.c", &text);
        let line = pick.index(lines) + 1;
        let w = fixed_context(&file, line, total).unwrap();
        let half = total / 2;
        prop_assert_eq!(w.prefix.len(), half.min(line - 1));
        prop_assert_eq!(w.suffix.len(), half.min(lines - line));
        prop_assert!(w.context_lines() <= total);
    }

    #[test]
    fn shrink_chain_is_strictly_decreasing(seed: u64, total in 2usize..60) {
        let file = file_from_seed(seed, 60);
        let index = build_brace_index(&file);
        for strategy in [Strategy::fixed(total).unwrap(), Strategy::mcs()] {
            for line in 1..=file.line_count() {
                let mut w = select_context(&file, &index, line, strategy).unwrap();
                let mut steps = 0;
                while let Some(next) = shrink(&file, &index, &w) {
                    let before = w.prefix.len() + w.suffix.len();
                    let after = next.prefix.len() + next.suffix.len();
                    prop_assert!(after < before, "line {}: {:?} -> {:?}", line, w, next);
                    w = next;
                    steps += 1;
                    prop_assert!(steps < 200);
                }
            }
        }
    }
}
