use guidesat::lang::{parse_sexpr, Signature};
use guidesat::tasks::{
    build_dataset, draw_subsets, equivalent_polynomials, generate, is_goal, normalize, product_of, read_dataset,
    task_from_subsets, unfold, write_dataset, TaskSpec,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generated_tasks_are_sound(n_d in 1usize..6, n_v in 1usize..6, seed in any::<u64>()) {
        let spec = TaskSpec::new(n_d, n_v, seed).unwrap();
        let task = generate(&spec);
        prop_assert!(is_goal(&task.reference_product));
        prop_assert!(equivalent_polynomials(&task.start, &task.reference_product));
        let sig = task.signature();
        prop_assert!(sig.check(&task.start).is_ok());
        prop_assert_eq!(generate(&spec), task);
    }

    #[test]
    fn subsets_are_nonempty_and_in_range(n_d in 1usize..4, n_v in 1usize..9, seed in any::<u64>()) {
        let spec = TaskSpec::new(n_d, n_v, seed).unwrap();
        let subsets = draw_subsets(&spec);
        prop_assert_eq!(subsets.len(), n_d);
        for s in &subsets {
            prop_assert!(!s.is_empty());
            prop_assert!(s.iter().all(|&v| v < n_v));
        }
        prop_assert_eq!(normalize(&unfold(&subsets)), normalize(&product_of(&subsets)));
    }
}

#[test]
fn sample_task_normalizes_like_its_product() {
    let sig = Signature::polynomial(3);
    let p = |s: &str| parse_sexpr(s, &sig).unwrap();
    let start = p("(+ (* z y) (+ (* x y) (* y y)))");
    assert!(equivalent_polynomials(&start, &p("(* y (+ x (+ y z)))")));
    assert!(!equivalent_polynomials(&start, &p("(* y (+ x z))")));
    assert!(!is_goal(&start));
    assert!(is_goal(&p("(* (+ x y) (* z (+ y z)))")));
}

#[test]
fn dataset_layout_and_roundtrip() {
    let tasks = build_dataset((2, 5), (2, 5), 20, 0).unwrap();
    assert_eq!(tasks.len(), 320);
    assert_eq!(tasks[0].id, "d2v2-00");
    assert_eq!(tasks[319].id, "d5v5-19");
    assert!(build_dataset((2, 3), (2, 3), 0, 0).unwrap().is_empty());
    let text = write_dataset(&tasks);
    let back = read_dataset(&text).unwrap();
    assert_eq!(back.len(), tasks.len());
    for (a, b) in tasks.iter().zip(&back) {
        assert_eq!(
            (&a.id, &a.start, &a.reference_product),
            (&b.id, &b.start, &b.reference_product)
        );
        assert_eq!((a.spec.n_d, a.spec.n_v), (b.spec.n_d, b.spec.n_v));
    }
    assert_eq!(build_dataset((2, 5), (2, 5), 20, 0).unwrap(), tasks);
    assert_ne!(build_dataset((2, 5), (2, 5), 20, 1).unwrap(), tasks);
}

#[test]
fn explicit_subsets_build_the_expected_task() {
    let spec = TaskSpec::new(2, 3, 9).unwrap();
    let task = task_from_subsets("t", spec, &[vec![0, 1], vec![1, 2]]);
    let sig = Signature::polynomial(3);
    assert!(equivalent_polynomials(
        &task.start,
        &parse_sexpr("(* (+ x y) (+ y z))", &sig).unwrap()
    ));
}

#[test]
fn bad_specs_and_lines_are_rejected() {
    assert!(TaskSpec::new(0, 2, 0).is_err());
    assert!(TaskSpec::new(2, 9, 0).is_err());
    assert!(read_dataset("only\tthree\tcols\n").is_err());
    assert!(read_dataset("a\t2\t2\t(* x q)\t(* x x)\n").is_err());
    assert!(read_dataset("# comment\n\n").unwrap().is_empty());
}
