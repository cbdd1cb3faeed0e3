use proptest::prelude::*;
use pump_core::{pump_power, MtpId, PowerDefinition, PowerRequest};
use serde_json::json;

fn table(m: usize, mdes: f64, rho: f64, num_zero: usize, seed: u64) -> pump_core::engine::PowerTable {
    let req = PowerRequest::from_value(&json!({
        "d_m": "d2.1_m2fc", "M": m, "MDES": mdes, "numZero": num_zero, "J": 20, "nbar": 40,
        "rho": rho, "MTP": ["BF", "HO", "BH", "WY-SS", "WY-SD"], "tnum": 300, "B": 300
    }))
    .unwrap()
    .check()
    .unwrap();
    pump_power(&req, seed).unwrap()
}

fn d1(t: &pump_core::engine::PowerTable, mtp: MtpId) -> f64 {
    t.get(mtp, PowerDefinition::Indiv(1)).unwrap().value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ordering_within_and_across_rows(
        m in 2usize..5,
        mdes in 0.0f64..0.4,
        rho in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let t = table(m, mdes, rho, 0, seed);
        for row in &t.rows {
            for (_, c) in row.cells() {
                prop_assert!((0.0..=1.0).contains(&c.value));
            }
            for w in row.min.windows(2) {
                prop_assert!(w[0].value >= w[1].value);
            }
        }
        // complete counts unadjusted rejections, so no raw individual power is below it
        let raw = t.row(MtpId::None).unwrap();
        for row in &t.rows {
            if let Some(c) = row.complete {
                prop_assert!(raw.indiv.iter().all(|i| c.value <= i.value));
            }
        }
        // Same draws in every row, so rejection sets are nested.
        prop_assert!(d1(&t, MtpId::None) >= d1(&t, MtpId::BenjaminiHochberg));
        prop_assert!(d1(&t, MtpId::BenjaminiHochberg) >= d1(&t, MtpId::Holm));
        prop_assert!(d1(&t, MtpId::Holm) >= d1(&t, MtpId::Bonferroni));
        prop_assert!(d1(&t, MtpId::WestfallYoungStepDown) >= d1(&t, MtpId::WestfallYoungSingleStep));
    }

    #[test]
    fn null_outcomes_drop_complete_power(m in 2usize..5, zeros in 1usize..3, seed in any::<u64>()) {
        let zeros = zeros.min(m - 1);
        let t = table(m, 0.2, 0.3, zeros, seed);
        prop_assert!(t.get(MtpId::Holm, PowerDefinition::Complete).is_none());
        prop_assert!(t.get(MtpId::Holm, PowerDefinition::Indiv(m)).is_some());
        prop_assert!(t.get(MtpId::Holm, PowerDefinition::Min(m - 1)).is_some());
    }
}
