//! Corpus directory layout.
//!
//! ```text
//! queue/id_<seq>_<+cov|-cov>
//! crashes/bucket_<hash>/id_<seq>
//! ```
//!
//! `<seq>` is the zero-padded test-case id and `<hash>` the 16-digit crash
//! bucket. Both directories are recreated on every write so stale entries
//! from an earlier run never linger.

use std::path::{Path, PathBuf};

use cgt_core::fuzzer::Fuzzer;

use crate::formats::{clear_dir, create_dir, write_bytes, FormatError};

pub fn queue_name(id: u64, cov_tag: bool) -> String {
    format!("id_{id:06}_{}", if cov_tag { "+cov" } else { "-cov" })
}

pub fn crash_path(bucket: u64, id: u64) -> PathBuf {
    PathBuf::from(format!("bucket_{bucket:016x}")).join(format!("id_{id:06}"))
}

/// Writes the fuzzer's queue and crash buckets under `dir`.
pub fn write_corpus(dir: &Path, fuzzer: &Fuzzer) -> Result<(), FormatError> {
    let queue = dir.join("queue");
    let crashes = dir.join("crashes");
    clear_dir(&queue)?;
    clear_dir(&crashes)?;
    create_dir(&queue)?;
    create_dir(&crashes)?;
    for entry in fuzzer.queue() {
        let tc = &entry.testcase;
        write_bytes(&queue.join(queue_name(tc.id, entry.cov_tag)), &tc.bytes)?;
    }
    for (&bucket, cases) in fuzzer.crashes() {
        for tc in cases {
            write_bytes(&crashes.join(crash_path(bucket, tc.id)), &tc.bytes)?;
        }
    }
    Ok(())
}
