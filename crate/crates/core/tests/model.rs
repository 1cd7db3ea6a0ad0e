use std::collections::{BTreeMap, BTreeSet};

use gmrs_core::model::{
    build_layers, message_rate, partition_messages, transmission_rate, LayerPolicy, RateAllocation, RequestProfile,
    SplitStructure, UserSet,
};
use proptest::prelude::*;

/// Request profiles with `K ≤ 4`, `I ≤ 10`, every message requested and
/// every user requesting something.
fn profiles() -> impl Strategy<Value = RequestProfile> {
    (1usize..=4, 1u32..=10)
        .prop_flat_map(|(k, i)| {
            // A nonzero requester mask per message.
            (Just(k), prop::collection::vec(1u16..(1 << k), i as usize))
        })
        .prop_filter_map("every user requests a message", |(k, masks)| {
            let requests: Vec<Vec<u32>> = (0..k)
                .map(|u| {
                    masks
                        .iter()
                        .enumerate()
                        .filter(|(_, m)| *m & (1 << u) != 0)
                        .map(|(i, _)| i as u32 + 1)
                        .collect()
                })
                .collect();
            if requests.iter().any(Vec::is_empty) {
                return None;
            }
            RequestProfile::from_requests(requests).ok()
        })
}

/// For each message, the exact set of users requesting it.
fn requester_oracle(profile: &RequestProfile) -> BTreeMap<u32, BTreeSet<usize>> {
    let mut out: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (k, req) in profile.requests().iter().enumerate() {
        for &m in req {
            out.entry(m).or_default().insert(k + 1);
        }
    }
    out
}

fn split_pairs(s: &SplitStructure) -> BTreeSet<(UserSet, UserSet)> {
    s.splits().iter().map(|&(g, l)| (s.groups()[g], s.layers()[l])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_message_sits_in_the_unit_of_its_requesters(profile in profiles()) {
        let part = partition_messages(&profile).unwrap();
        let oracle = requester_oracle(&profile);
        let mut seen = BTreeSet::new();
        for (group, unit) in part.units() {
            prop_assert!(!unit.is_empty());
            for &m in unit {
                prop_assert!(seen.insert(m), "message {m} appears twice");
                let members: BTreeSet<usize> = group.users().collect();
                prop_assert_eq!(&members, &oracle[&m]);
            }
        }
        prop_assert_eq!(seen.len(), profile.message_count());
    }

    #[test]
    fn full_general_split_count(profile in profiles()) {
        let part = partition_messages(&profile).unwrap();
        let s = build_layers(&part, LayerPolicy::FullGeneral).unwrap();
        let k = profile.users();
        let expect: usize = s.groups().iter().map(|g| 1usize << (k - g.len())).sum();
        prop_assert_eq!(s.num_splits(), expect);
        for &(g, l) in s.splits() {
            prop_assert!(s.groups()[g].is_subset_of(s.layers()[l]));
        }
    }

    #[test]
    fn policies_are_nested(profile in profiles()) {
        let part = partition_messages(&profile).unwrap();
        let none = split_pairs(&build_layers(&part, LayerPolicy::NoSplit).unwrap());
        let one = split_pairs(&build_layers(&part, LayerPolicy::OneLayer).unwrap());
        let full = split_pairs(&build_layers(&part, LayerPolicy::FullGeneral).unwrap());
        prop_assert!(none.is_subset(&one));
        prop_assert!(one.is_subset(&full));
    }

    #[test]
    fn decode_subsets_enumerate_all_nonempty_subsets(profile in profiles()) {
        let s = build_layers(&partition_messages(&profile).unwrap(), LayerPolicy::FullGeneral).unwrap();
        for k in 1..=profile.users() {
            let layers = s.user_layers(k).unwrap().to_vec();
            let subsets = s.decode_subsets(k).unwrap();
            prop_assert_eq!(subsets.len(), (1usize << layers.len()) - 1);
            let mut brute = BTreeSet::new();
            for mask in 1u32..(1 << layers.len()) {
                let pick: Vec<usize> = (0..layers.len()).filter(|i| mask & (1 << i) != 0).map(|i| layers[i]).collect();
                brute.insert(pick);
            }
            let got: BTreeSet<Vec<usize>> = subsets.iter().map(|x| x.layers.clone()).collect();
            prop_assert_eq!(got, brute);
        }
    }

    #[test]
    fn rate_maps_are_linear(
        profile in profiles(),
        seed_x in prop::collection::vec(0.0f64..10.0, 64),
        seed_y in prop::collection::vec(0.0f64..10.0, 64),
        a in 0.0f64..3.0,
        b in 0.0f64..3.0,
    ) {
        let s = build_layers(&partition_messages(&profile).unwrap(), LayerPolicy::FullGeneral).unwrap();
        let n = s.num_splits();
        prop_assume!(n <= 64);
        let x = RateAllocation::new(&s, seed_x[..n].to_vec()).unwrap();
        let y = RateAllocation::new(&s, seed_y[..n].to_vec()).unwrap();
        let z = RateAllocation::new(&s, (0..n).map(|i| a * seed_x[i] + b * seed_y[i]).collect()).unwrap();
        for &g in s.groups() {
            let lhs = message_rate(&z, &s, g).unwrap();
            let rhs = a * message_rate(&x, &s, g).unwrap() + b * message_rate(&y, &s, g).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
        for &l in s.layers() {
            let lhs = transmission_rate(&z, &s, l).unwrap();
            let rhs = a * transmission_rate(&x, &s, l).unwrap() + b * transmission_rate(&y, &s, l).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn rate_maps_match_resummation(profile in profiles(), raw in prop::collection::vec(0.0f64..5.0, 64)) {
        let s = build_layers(&partition_messages(&profile).unwrap(), LayerPolicy::OneLayer).unwrap();
        let n = s.num_splits();
        prop_assume!(n <= 64);
        let r = RateAllocation::new(&s, raw[..n].to_vec()).unwrap();
        for &g in s.groups() {
            let direct: f64 = s.layers().iter().filter_map(|&l| r.get(&s, g, l)).sum();
            prop_assert!((message_rate(&r, &s, g).unwrap() - direct).abs() < 1e-12);
        }
        for &l in s.layers() {
            let direct: f64 = s.groups().iter().filter_map(|&g| r.get(&s, g, l)).sum();
            prop_assert!((transmission_rate(&r, &s, l).unwrap() - direct).abs() < 1e-12);
        }
        let total_by_group: f64 = r.message_rates(&s).iter().sum();
        let total_by_layer: f64 = r.transmission_rates(&s).iter().sum();
        prop_assert!((total_by_group - total_by_layer).abs() < 1e-9);
    }
}

#[test]
fn unknown_group_and_layer_are_rejected() {
    let profile = RequestProfile::from_requests(vec![vec![1], vec![2]]).unwrap();
    let s = build_layers(&partition_messages(&profile).unwrap(), LayerPolicy::NoSplit).unwrap();
    let r = RateAllocation::zeros(&s);
    let both = UserSet::from_users([1, 2]).unwrap();
    assert!(message_rate(&r, &s, both).is_err());
    assert!(transmission_rate(&r, &s, both).is_err());
    assert!(s.decode_subsets(3).is_err());
}
