//! Wall-clock replay.

use std::thread;
use std::time::Instant;

use cgt_core::dataset::{replay_trial, Dataset, ReplayError, TimingRecord};
use cgt_core::engine::Clock;
use cgt_core::fuzzer::TracingMode;
use cgt_core::vm::ProgramImage;

/// Monotonic nanoseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct InstantClock {
    origin: Instant,
}

impl InstantClock {
    pub fn new() -> Self {
        InstantClock {
            origin: Instant::now(),
        }
    }
}

impl Default for InstantClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for InstantClock {
    #[inline]
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}

/// Replays `trials` trials of every mode in `modes`, spreading the trials
/// over `jobs` worker threads. Within a trial the modes run back to back, so
/// slow drift in machine speed hits all modes alike. Every replay starts from
/// a fresh engine, so apart from measured times the result does not depend on
/// `jobs`. Output is trial-major: `out[t * modes.len() + m]`.
pub fn replay_timed(
    dataset: &Dataset,
    image: &ProgramImage,
    modes: &[TracingMode],
    trials: u32,
    jobs: usize,
) -> Result<Vec<Vec<TimingRecord>>, ReplayError> {
    let jobs = jobs.clamp(1, trials.max(1) as usize);
    let mut slots: Vec<Option<Result<Vec<Vec<TimingRecord>>, ReplayError>>> =
        (0..trials).map(|_| None).collect();
    let per = slots.len().div_ceil(jobs).max(1);
    thread::scope(|s| {
        for (c, chunk) in slots.chunks_mut(per).enumerate() {
            s.spawn(move || {
                let clock = InstantClock::new();
                for (i, slot) in chunk.iter_mut().enumerate() {
                    let trial = (c * per + i) as u32;
                    let runs = modes
                        .iter()
                        .map(|&m| replay_trial(dataset, image, m, trial, &clock))
                        .collect();
                    *slot = Some(runs);
                }
            });
        }
    });
    let mut out = Vec::with_capacity(trials as usize * modes.len());
    for slot in slots {
        out.extend(slot.expect("every trial slot is filled")?);
    }
    Ok(out)
}
