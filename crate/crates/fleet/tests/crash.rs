mod common;

use common::crash_harness::{run_injections, INJECTIONS};

#[test]
fn fifty_kill_restart_injections() {
    let s = run_injections();
    assert_eq!(s.injections, INJECTIONS);
    assert_eq!(s.by_stage.values().sum::<usize>(), INJECTIONS);
    assert!(s.acknowledged_uploads > 0);
    println!("{s:?}");
}
