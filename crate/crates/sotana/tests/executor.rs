use std::time::{Duration, Instant};

use sotana::exec::{execute_candidate, ExecError, ExecLimits, ExecStatus, Runner};
use sotana_core::corpus::CodegenTask;

fn task() -> CodegenTask {
    CodegenTask {
        task_id: "add".into(),
        prompt: "def add(a, b):\n    \"\"\"Return the sum of a and b.\"\"\"\n".into(),
        tests: "def check(candidate):\n    assert candidate(1, 2) == 3\n    assert candidate(-1, 1) == 0\n".into(),
        entry_point: "add".into(),
    }
}

fn python() -> Runner {
    Runner::parse("python3 {file}").unwrap()
}

fn limits(wall_ms: u64) -> ExecLimits {
    ExecLimits { wall: Duration::from_millis(wall_ms), ..ExecLimits::default() }
}

#[test]
fn passing_failing_and_looping_candidates() {
    let ok = execute_candidate(&task(), "    return a + b\n", limits(10_000), &python()).unwrap();
    assert_eq!(ok.status, ExecStatus::Ok);
    assert!(ok.passed);
    assert_eq!(ok.task_id, "add");

    let bad = execute_candidate(&task(), "    return a - b\n", limits(10_000), &python()).unwrap();
    assert_eq!(bad.status, ExecStatus::TestFailure);
    assert!(!bad.passed);

    let raising = execute_candidate(&task(), "    raise ValueError('no')\n", limits(10_000), &python()).unwrap();
    assert_eq!(raising.status, ExecStatus::TestFailure);

    let start = Instant::now();
    let lp = execute_candidate(&task(), "    while True:\n        pass\n", limits(1_000), &python()).unwrap();
    let took = start.elapsed();
    assert_eq!(lp.status, ExecStatus::Timeout);
    assert!(!lp.passed);
    assert!(took < Duration::from_millis(2_000), "took {took:?}");
}

#[test]
fn killed_by_signal_is_a_crash() {
    let c = "    import os, signal\n    os.kill(os.getpid(), signal.SIGSEGV)\n";
    let out = execute_candidate(&task(), c, limits(10_000), &python()).unwrap();
    assert_eq!(out.status, ExecStatus::Crash);
}

#[test]
fn output_flood_is_stopped() {
    let c = "    import sys\n    while True:\n        sys.stdout.write('x' * 65536)\n";
    let lim = ExecLimits { wall: Duration::from_secs(10), output_bytes: 1 << 16 };
    let start = Instant::now();
    let out = execute_candidate(&task(), c, lim, &python()).unwrap();
    assert_eq!(out.status, ExecStatus::Crash);
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn spawned_children_die_with_the_candidate() {
    // The grandchild would sleep past the test; it must not keep the run
    // alive or survive it.
    let c = "    import subprocess, time\n    subprocess.Popen(['sleep', '30'])\n    while True:\n        time.sleep(1)\n";
    let start = Instant::now();
    let out = execute_candidate(&task(), c, limits(800), &python()).unwrap();
    assert_eq!(out.status, ExecStatus::Timeout);
    assert!(start.elapsed() < Duration::from_millis(1_800), "took {:?}", start.elapsed());

    let detached = "    import subprocess\n    subprocess.Popen(['sleep', '30'])\n    return a + b\n";
    let start = Instant::now();
    let out = execute_candidate(&task(), detached, limits(10_000), &python()).unwrap();
    assert_eq!(out.status, ExecStatus::Ok);
    assert!(start.elapsed() < Duration::from_secs(5), "took {:?}", start.elapsed());
}

#[test]
fn runs_in_a_private_directory() {
    let c = "    import os\n    assert set(os.listdir('.')) <= {'candidate.py', 'scratch'}, os.listdir('.')\n    open('scratch', 'w').write('x')\n    return a + b\n";
    let out = execute_candidate(&task(), c, limits(10_000), &python()).unwrap();
    assert_eq!(out.status, ExecStatus::Ok);
}

#[test]
fn missing_runner_is_a_configuration_error() {
    let r = Runner::parse("definitely-not-an-interpreter-xyz {file}").unwrap();
    let err = execute_candidate(&task(), "    return a + b\n", limits(1_000), &r).unwrap_err();
    assert!(matches!(err, ExecError::RunnerMissing(ref p) if p == "definitely-not-an-interpreter-xyz"));
}
