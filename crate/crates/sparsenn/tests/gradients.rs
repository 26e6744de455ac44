use pcvox_nn::gradcheck::{check_all_ops, check_ste_identity};

#[test]
fn every_op_passes_twenty_instances() {
    for r in check_all_ops(20, 2024) {
        println!("{:<22} {:>3} instances  worst rel err {:.2e}", r.op, r.instances, r.worst_rel_err);
        assert!(r.passed(20), "{r:?}");
    }
}

#[test]
fn ste_round_backward_is_identity() {
    let r = check_ste_identity(20, 77);
    assert!(r.passed(20), "{r:?}");
}
