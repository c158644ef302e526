use txmerge_core::rewrite::Mutation;
use txmerge_workload::oracle::{oracle_check, OracleSpec};

#[test]
fn merged_batches_match_serial_execution() {
    let v = oracle_check(&OracleSpec { trials: 150, seed: 7, ..Default::default() }).unwrap();
    if let Some(m) = v.mismatches.first() {
        panic!("trial {} ({}): serial {:#?}\nmerged {:#?}\ndiff {:#?}", m.trial, m.txn, m.serial, m.merged, m.state_diff);
    }
    assert_eq!(v.trials, 150);
    assert!(v.sizes[8] > 0);
}

#[test]
fn dropped_else_branch_is_caught() {
    let v = oracle_check(&OracleSpec { trials: 300, seed: 7, mutation: Mutation::DropElse, ..Default::default() }).unwrap();
    assert!(!v.passed(), "mutation survived {} trials", v.trials);
    assert_eq!(v.mismatches[0].txn, "neworder");
}
