use std::collections::BTreeMap;
use std::f64::consts::PI;

use pavg_core::expr::{field_from_spec, parse, BinaryOp, EvalError, Expr, Scope, UnaryOp, Var};
use pavg_core::vdp::{dsl_spec, ForcingParams, VdpField, VdpModel};
use pavg_core::PeriodicField;
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0.0f64..1e6).prop_map(Expr::Const),
        (0u32..40).prop_map(|k| Expr::Const(k as f64 * 0.25)),
        Just(Expr::Var(Var::T)),
        Just(Expr::Var(Var::Eps)),
        (0usize..3).prop_map(|i| Expr::Var(Var::X(i))),
        prop::sample::select(vec!["lam", "a", "b_2"]).prop_map(|s| Expr::Param(s.to_string())),
    ]
}

fn unary_op() -> impl Strategy<Value = UnaryOp> {
    prop::sample::select(vec![
        UnaryOp::Neg,
        UnaryOp::Abs,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Sqrt,
        UnaryOp::Sign,
    ])
}

fn binary_op() -> impl Strategy<Value = BinaryOp> {
    prop::sample::select(vec![
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Pow,
    ])
}

// Depth counts the leaf as 1, so 5 levels of recursion give depth ≤ 6.
fn tree() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(5, 64, 2, |inner| {
        prop_oneof![
            (unary_op(), inner.clone()).prop_map(|(op, e)| Expr::unary(op, e)),
            (binary_op(), inner.clone(), inner).prop_map(|(op, a, b)| Expr::binary(op, a, b)),
        ]
    })
}

fn bindings() -> BTreeMap<String, f64> {
    [("lam", 0.7), ("a", -1.3), ("b_2", 2.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn printed_trees_reparse_identically(e in tree()) {
        prop_assume!(e.depth() <= 6);
        let scope = Scope::new(Some(3), ["lam", "a", "b_2"]);
        let text = e.to_string();
        let back = parse(&text, &scope).unwrap();
        prop_assert_eq!(&back, &e, "printed as {}", text);
    }

    #[test]
    fn eval_is_total_up_to_declared_faults(
        e in tree(),
        t in -10.0f64..10.0,
        x in prop::array::uniform3(-5.0f64..5.0),
        eps in 0.0f64..0.5,
    ) {
        let params = bindings();
        let first = e.eval(t, &x, eps, &params);
        match &first {
            Ok(_) | Err(EvalError::DivisionByZero(_)) | Err(EvalError::DomainError(_)) => {}
            Err(other) => prop_assert!(false, "unexpected fault {other:?} in {e}"),
        }
        // bitwise determinism
        let second = e.eval(t, &x, eps, &params);
        match (first, second) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn builtin_and_text_fields_agree(
        classical in any::<bool>(),
        a in -2.0f64..2.0,
        lambda in 0.0f64..3.0,
        t in 0.0f64..(2.0 * PI),
        m in -4.0f64..4.0,
        n in -4.0f64..4.0,
        eps in 0.0f64..0.2,
    ) {
        let model = if classical { VdpModel::Classical } else { VdpModel::Nonsmooth };
        let p = ForcingParams::new(a, lambda);
        let native = VdpField { model, params: p };
        let text = field_from_spec(&dsl_spec(model, p)).unwrap();
        let (mut g1, mut g2) = ([0.0; 2], [0.0; 2]);
        native.eval(t, &[m, n], eps, &mut g1).unwrap();
        text.eval(t, &[m, n], eps, &mut g2).unwrap();
        for i in 0..2 {
            prop_assert!((g1[i] - g2[i]).abs() <= 1e-14 * (1.0 + g1[i].abs()), "{g1:?} vs {g2:?}");
        }
    }

    #[test]
    fn fields_are_time_periodic(
        t in 0.0f64..20.0,
        m in -4.0f64..4.0,
        n in -4.0f64..4.0,
    ) {
        let native = VdpField { model: VdpModel::Nonsmooth, params: ForcingParams::new(0.3, 1.1) };
        let (mut g1, mut g2) = ([0.0; 2], [0.0; 2]);
        native.eval(t, &[m, n], 0.0, &mut g1).unwrap();
        native.eval(t + native.period(), &[m, n], 0.0, &mut g2).unwrap();
        for i in 0..2 {
            prop_assert!((g1[i] - g2[i]).abs() <= 1e-12 * (1.0 + g1[i].abs()));
        }
    }
}

#[test]
fn text_field_matches_builtin_on_a_grid() {
    for model in [VdpModel::Nonsmooth, VdpModel::Classical] {
        let p = ForcingParams::new(0.1, 1.2);
        let native = VdpField { model, params: p };
        let text = field_from_spec(&dsl_spec(model, p)).unwrap();
        let mut worst = 0.0f64;
        for i in 0..100 {
            let t = 2.0 * PI * i as f64 / 100.0;
            let v = [3.0 * (0.37 * i as f64).sin(), 2.5 * (0.91 * i as f64).cos()];
            let (mut g1, mut g2) = ([0.0; 2], [0.0; 2]);
            native.eval(t, &v, 0.0, &mut g1).unwrap();
            text.eval(t, &v, 0.0, &mut g2).unwrap();
            worst = worst.max((g1[0] - g2[0]).abs()).max((g1[1] - g2[1]).abs());
        }
        assert!(worst <= 1e-14, "{model}: {worst:e}");
    }
}
