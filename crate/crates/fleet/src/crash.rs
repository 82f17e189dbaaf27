//! Fault injection for crash-recovery tests.
//!
//! With `FLEETNAV_CRASH_AT=<stage>:<n>` set, the process aborts the `n`-th time
//! (1-based) execution reaches [`point`] with that stage name.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

pub const ENV: &str = "FLEETNAV_CRASH_AT";

struct Target {
    stage: String,
    at: u64,
    hits: AtomicU64,
}

fn target() -> Option<&'static Target> {
    static T: OnceLock<Option<Target>> = OnceLock::new();
    T.get_or_init(|| {
        let v = std::env::var(ENV).ok()?;
        let (stage, n) = v.rsplit_once(':')?;
        Some(Target { stage: stage.to_string(), at: n.parse().ok()?, hits: AtomicU64::new(0) })
    })
    .as_ref()
}

/// Whether this hit of `stage` is the configured crash point.
pub fn armed(stage: &str) -> bool {
    match target() {
        Some(t) if t.stage == stage => t.hits.fetch_add(1, Ordering::SeqCst) + 1 == t.at,
        _ => false,
    }
}

pub fn point(stage: &str) {
    if armed(stage) {
        eprintln!("{{\"level\":\"ERROR\",\"message\":\"injected crash\",\"stage\":\"{stage}\"}}");
        std::process::abort();
    }
}
