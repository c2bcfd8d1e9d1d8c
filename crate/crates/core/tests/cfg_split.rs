use std::collections::{BTreeMap, BTreeSet};

use cgt_core::cfg::{
    discover_blocks, find_critical_edges, infer_edge_coverage, split_critical_edges, BasicBlock,
    ControlFlowGraph, Edge, Terminator,
};
use cgt_core::gen::random_program;
use cgt_core::rng::FuzzRng;
use cgt_core::tracer::TracerImage;
use cgt_core::vm::{execute, run, ExecBudget, Observer, ProgramImage};
use proptest::prelude::*;

/// Critical edges by definition, counting predecessors from scratch. The
/// entry has an extra virtual predecessor.
fn critical_by_definition(entry: u32, blocks: &[BasicBlock]) -> BTreeSet<Edge> {
    let mut succs: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut preds: BTreeMap<u32, BTreeSet<Option<u32>>> = BTreeMap::new();
    preds.entry(entry).or_default().insert(None);
    for b in blocks {
        for &s in &b.successors {
            succs.entry(b.start).or_default().insert(s);
            preds.entry(s).or_default().insert(Some(b.start));
        }
    }
    let mut out = BTreeSet::new();
    for (&src, dests) in &succs {
        for &d in dests {
            if dests.len() > 1 && preds[&d].len() > 1 {
                out.insert(Edge::new(src, d));
            }
        }
    }
    out
}

/// Logs every transition between consecutive blocks by watching fetches.
struct Transitions<'a> {
    starts: &'a BTreeSet<u32>,
    prev: Option<u32>,
    seen: BTreeSet<Edge>,
}

impl Observer for Transitions<'_> {
    fn on_fetch(&mut self, pc: u32) {
        if self.starts.contains(&pc) {
            if let Some(p) = self.prev {
                self.seen.insert(Edge::new(p, pc));
            }
            self.prev = Some(pc);
        }
    }
}

fn dynamic_edges(image: &ProgramImage, starts: &BTreeSet<u32>, input: &[u8]) -> BTreeSet<Edge> {
    let mut t = Transitions {
        starts,
        prev: None,
        seen: BTreeSet::new(),
    };
    run(image, input, ExecBudget::default(), &mut t);
    t.seen
}

fn synthetic_blocks(shape: &[(u8, u8, u8)]) -> Vec<BasicBlock> {
    let n = shape.len() as u32;
    shape
        .iter()
        .enumerate()
        .map(|(i, &(kind, a, b))| {
            let (terminator, successors) = match kind % 3 {
                0 => (Terminator::Halt, vec![]),
                1 => (Terminator::Jmp, vec![(a as u32 % n) * 4]),
                _ => (
                    Terminator::CondJmp,
                    vec![(a as u32 % n) * 4, (b as u32 % n) * 4],
                ),
            };
            BasicBlock {
                start: i as u32 * 4,
                len: 4,
                terminator,
                successors,
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn critical_edges_match_the_definition(shape in prop::collection::vec((0u8..3, any::<u8>(), any::<u8>()), 1..24)) {
        let blocks = synthetic_blocks(&shape);
        let cfg = ControlFlowGraph::new(0, blocks.clone());
        prop_assert_eq!(find_critical_edges(&cfg), critical_by_definition(0, &blocks));
    }

    #[test]
    fn split_programs_behave_identically(seed in any::<u64>(), n in 2usize..40) {
        let img = random_program(seed, n);
        let cfg = ControlFlowGraph::from_image(&img).unwrap();
        let split = split_critical_edges(&img, &cfg).unwrap();
        prop_assert!(find_critical_edges(&split.cfg).is_empty());
        let again = split_critical_edges(&split.image, &split.cfg).unwrap();
        prop_assert_eq!(&again.image, &split.image);
        prop_assert!(again.dummies.is_empty());

        let starts: BTreeSet<u32> = split.cfg.block_starts().collect();
        let blocks: Vec<BasicBlock> = split.cfg.blocks().cloned().collect();
        let mut tracer = TracerImage::new(&split.image, &blocks);
        let mut rng = FuzzRng::new(seed ^ 0x5eed);
        for _ in 0..25 {
            let input: Vec<u8> = (0..8).map(|_| rng.below(4) as u8).collect();
            let before = execute(&img, &input, ExecBudget::default());
            let after = execute(&split.image, &input, ExecBudget::default());
            prop_assert_eq!(before.kind, after.kind);

            let trace = tracer.trace(&input, ExecBudget::default());
            let covered: BTreeSet<u32> = trace.blocks.iter().copied().collect();
            let inferred = infer_edge_coverage(&covered, &split.cfg).unwrap();
            prop_assert_eq!(&inferred, &dynamic_edges(&split.image, &starts, &input));
            prop_assert_eq!(&inferred, &tracer.trace_edges(&input, ExecBudget::default()));
        }
    }

    #[test]
    fn blocks_partition_reachable_code(seed in any::<u64>(), n in 2usize..40) {
        let img = random_program(seed, n);
        let blocks = discover_blocks(&img).unwrap();
        for w in blocks.windows(2) {
            prop_assert!(w[0].end() <= w[1].start);
        }
        let cfg = ControlFlowGraph::new(img.entry(), blocks.clone());
        let reachable = cfg.reachable();
        prop_assert_eq!(reachable.len(), blocks.len());
    }
}

#[test]
fn inference_refuses_graphs_with_critical_edges() {
    let img = (0..200)
        .map(|s| random_program(s, 24))
        .find(|img| !find_critical_edges(&ControlFlowGraph::from_image(img).unwrap()).is_empty())
        .expect("some random program has a critical edge");
    let cfg = ControlFlowGraph::from_image(&img).unwrap();
    assert!(infer_edge_coverage(&BTreeSet::new(), &cfg).is_err());
}
