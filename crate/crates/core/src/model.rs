//! Set algebra over user subsets.
//!
//! Users are numbered `1..=K` in the public API and stored as bit `k - 1` of a
//! [`UserSet`]. Every enumeration (groups, layers, split indices, decode
//! subsets) is in ascending bitmask order so that solver assembly is
//! reproducible.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Hard cap on the number of users.
pub const MAX_USERS: usize = 16;

/// Decode-subset enumeration is exponential in `|G^(k)|`; beyond this it is refused.
pub const MAX_DECODE_LAYERS: usize = 24;

/// A subset of users `{1..K}` stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserSet(u16);

impl UserSet {
    pub const EMPTY: UserSet = UserSet(0);

    pub const fn from_bits(bits: u16) -> Self {
        UserSet(bits)
    }

    pub const fn bits(self) -> u16 {
        self.0
    }

    /// The full user set `{1..K}`.
    pub fn full(users: usize) -> Result<Self> {
        check_user_count(users)?;
        Ok(UserSet(((1u32 << users) - 1) as u16))
    }

    pub fn singleton(user: usize) -> Result<Self> {
        if user == 0 || user > MAX_USERS {
            return Err(Error::UserOutOfRange {
                user,
                users: MAX_USERS,
            });
        }
        Ok(UserSet(1 << (user - 1)))
    }

    /// Builds a set from 1-based user indices.
    pub fn from_users<I: IntoIterator<Item = usize>>(users: I) -> Result<Self> {
        users
            .into_iter()
            .try_fold(UserSet::EMPTY, |acc, k| Ok(acc.union(UserSet::singleton(k)?)))
    }

    pub const fn contains(self, user: usize) -> bool {
        user >= 1 && user <= MAX_USERS && self.0 & (1 << (user - 1)) != 0
    }

    pub const fn is_subset_of(self, other: UserSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub const fn union(self, other: UserSet) -> UserSet {
        UserSet(self.0 | other.0)
    }

    pub const fn intersection(self, other: UserSet) -> UserSet {
        UserSet(self.0 & other.0)
    }

    pub const fn difference(self, other: UserSet) -> UserSet {
        UserSet(self.0 & !other.0)
    }

    pub const fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in ascending order, 1-based.
    pub fn users(self) -> impl Iterator<Item = usize> {
        (1..=MAX_USERS).filter(move |&k| self.contains(k))
    }

    /// All supersets `X` with `self ⊆ X ⊆ universe`, ascending.
    pub fn supersets_within(self, universe: UserSet) -> impl Iterator<Item = UserSet> {
        let free = universe.difference(self).0;
        // Enumerate submasks of `free` in ascending order.
        let mut sub: u32 = 0;
        let mut done = !self.is_subset_of(universe);
        core::iter::from_fn(move || {
            if done {
                return None;
            }
            let out = UserSet(self.0 | sub as u16);
            if sub == free as u32 {
                done = true;
            } else {
                sub = ((sub | !(free as u32)) + 1) & free as u32;
            }
            Some(out)
        })
    }
}

impl fmt::Display for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, k) in self.users().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn check_user_count(users: usize) -> Result<()> {
    if users == 0 || users > MAX_USERS {
        return Err(Error::InvalidProfile(format!(
            "user count {users} outside 1..={MAX_USERS}"
        )));
    }
    Ok(())
}

/// Per-user requested message sets over a declared message set.
///
/// Message labels are arbitrary positive integers; they need not be
/// contiguous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestProfile {
    messages: Vec<u32>,
    requests: Vec<Vec<u32>>,
}

impl RequestProfile {
    /// Declares the message set explicitly. Coverage of `messages` by the
    /// requests is checked by [`partition_messages`].
    pub fn new(messages: Vec<u32>, requests: Vec<Vec<u32>>) -> Result<Self> {
        check_user_count(requests.len())?;
        let mut messages = messages;
        messages.sort_unstable();
        if messages.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidProfile("duplicate message label".into()));
        }
        if messages.is_empty() {
            return Err(Error::InvalidProfile("empty message set".into()));
        }
        let mut normalized = Vec::with_capacity(requests.len());
        for (i, mut r) in requests.into_iter().enumerate() {
            r.sort_unstable();
            r.dedup();
            if r.is_empty() {
                return Err(Error::InvalidProfile(format!(
                    "user {} requests no message",
                    i + 1
                )));
            }
            normalized.push(r);
        }
        Ok(RequestProfile {
            messages,
            requests: normalized,
        })
    }

    /// Uses the union of all requests as the message set.
    pub fn from_requests(requests: Vec<Vec<u32>>) -> Result<Self> {
        let mut all: Vec<u32> = requests.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        Self::new(all, requests)
    }

    /// Message set `{1..I}`.
    pub fn with_message_count(count: u32, requests: Vec<Vec<u32>>) -> Result<Self> {
        Self::new((1..=count).collect(), requests)
    }

    pub fn users(&self) -> usize {
        self.requests.len()
    }

    pub fn message_count(&self) -> usize {
        self.messages.len()
    }

    /// Declared message labels, ascending.
    pub fn messages(&self) -> &[u32] {
        &self.messages
    }

    /// Requested labels of user `k` (1-based), ascending.
    pub fn request(&self, user: usize) -> Result<&[u32]> {
        if user == 0 || user > self.users() {
            return Err(Error::UserOutOfRange {
                user,
                users: self.users(),
            });
        }
        Ok(&self.requests[user - 1])
    }

    pub fn requests(&self) -> &[Vec<u32>] {
        &self.requests
    }

    /// The set of users requesting `message`.
    pub fn requesters(&self, message: u32) -> UserSet {
        self.requests
            .iter()
            .enumerate()
            .filter(|(_, r)| r.binary_search(&message).is_ok())
            .fold(UserSet::EMPTY, |acc, (i, _)| acc.union(UserSet(1 << i)))
    }
}

/// The message-unit partition: `P_S` for every group `S` with a nonempty unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageUnitPartition {
    users: usize,
    units: BTreeMap<UserSet, Vec<u32>>,
}

impl MessageUnitPartition {
    pub fn users(&self) -> usize {
        self.users
    }

    /// Groups in canonical order.
    pub fn groups(&self) -> impl Iterator<Item = UserSet> + '_ {
        self.units.keys().copied()
    }

    pub fn unit(&self, group: UserSet) -> Option<&[u32]> {
        self.units.get(&group).map(Vec::as_slice)
    }

    pub fn units(&self) -> impl Iterator<Item = (UserSet, &[u32])> {
        self.units.iter().map(|(s, m)| (*s, m.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Groups the messages by the exact set of users requesting them.
pub fn partition_messages(profile: &RequestProfile) -> Result<MessageUnitPartition> {
    let mut units: BTreeMap<UserSet, Vec<u32>> = BTreeMap::new();
    for &m in profile.messages() {
        let who = profile.requesters(m);
        if who.is_empty() {
            return Err(Error::InvalidProfile(format!(
                "message {m} is requested by no user"
            )));
        }
        units.entry(who).or_default().push(m);
    }
    for (i, r) in profile.requests().iter().enumerate() {
        if let Some(m) = r.iter().find(|m| profile.messages.binary_search(m).is_err()) {
            return Err(Error::InvalidProfile(format!(
                "user {} requests undeclared message {m}",
                i + 1
            )));
        }
    }
    Ok(MessageUnitPartition {
        users: profile.users(),
        units,
    })
}

/// Which layers each message unit may be split across.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerPolicy {
    /// Every superset of the group within the user set.
    FullGeneral,
    /// The group itself and the full user set.
    OneLayer,
    /// The group itself.
    NoSplit,
}

/// One decode subset `X ⊆ G^(k)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeSubset {
    /// Bitmask over the positions of `G^(k)` as returned by [`SplitStructure::user_layers`].
    pub mask: u32,
    /// Indices into [`SplitStructure::layers`], ascending.
    pub layers: Vec<usize>,
}

/// Groups, layers, split indices and per-user decode sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitStructure {
    users: usize,
    policy: LayerPolicy,
    groups: Vec<UserSet>,
    group_layers: Vec<Vec<usize>>,
    layers: Vec<UserSet>,
    layer_origins: Vec<Vec<usize>>,
    splits: Vec<(usize, usize)>,
    split_lookup: BTreeMap<(UserSet, UserSet), usize>,
    user_layers: Vec<Vec<usize>>,
}

/// Builds the layer structure for `partition` under `policy`.
pub fn build_layers(partition: &MessageUnitPartition, policy: LayerPolicy) -> Result<SplitStructure> {
    SplitStructure::from_groups(partition.users(), partition.groups().collect(), policy)
}

impl SplitStructure {
    /// Builds the structure from a group list directly.
    pub fn from_groups(users: usize, groups: Vec<UserSet>, policy: LayerPolicy) -> Result<Self> {
        let universe = UserSet::full(users)?;
        let mut groups = groups;
        groups.sort_unstable();
        groups.dedup();
        if groups.is_empty() {
            return Err(Error::InvalidProfile("no message groups".into()));
        }
        for g in &groups {
            if g.is_empty() || !g.is_subset_of(universe) {
                return Err(Error::InvalidProfile(format!(
                    "group {g} is empty or outside the user set"
                )));
            }
        }

        let per_group: Vec<Vec<UserSet>> = groups
            .iter()
            .map(|&s| match policy {
                LayerPolicy::FullGeneral => s.supersets_within(universe).collect(),
                LayerPolicy::OneLayer if s == universe => alloc::vec![s],
                LayerPolicy::OneLayer => alloc::vec![s, universe],
                LayerPolicy::NoSplit => alloc::vec![s],
            })
            .collect();

        let mut layers: Vec<UserSet> = per_group.iter().flatten().copied().collect();
        layers.sort_unstable();
        layers.dedup();
        let layer_index = |g: UserSet| layers.binary_search(&g).expect("layer present");

        let group_layers: Vec<Vec<usize>> = per_group
            .iter()
            .map(|gs| gs.iter().map(|&g| layer_index(g)).collect())
            .collect();

        let mut splits = Vec::new();
        let mut split_lookup = BTreeMap::new();
        let mut layer_origins = alloc::vec![Vec::new(); layers.len()];
        for (si, gl) in group_layers.iter().enumerate() {
            for &li in gl {
                split_lookup.insert((groups[si], layers[li]), splits.len());
                splits.push((si, li));
                layer_origins[li].push(si);
            }
        }

        let user_layers = (1..=users)
            .map(|k| {
                layers
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.contains(k))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();

        Ok(SplitStructure {
            users,
            policy,
            groups,
            group_layers,
            layers,
            layer_origins,
            splits,
            split_lookup,
            user_layers,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn policy(&self) -> LayerPolicy {
        self.policy
    }

    /// Message groups, canonical order.
    pub fn groups(&self) -> &[UserSet] {
        &self.groups
    }

    /// Layers, canonical order.
    pub fn layers(&self) -> &[UserSet] {
        &self.layers
    }

    /// Layer indices of group `si`.
    pub fn group_layers(&self, si: usize) -> &[usize] {
        &self.group_layers[si]
    }

    /// Group indices whose units can be carried on layer `li`.
    pub fn layer_origins(&self, li: usize) -> &[usize] {
        &self.layer_origins[li]
    }

    /// Split indices as `(group index, layer index)`, ordered by group then layer.
    pub fn splits(&self) -> &[(usize, usize)] {
        &self.splits
    }

    pub fn num_splits(&self) -> usize {
        self.splits.len()
    }

    pub fn group_index(&self, group: UserSet) -> Option<usize> {
        self.groups.binary_search(&group).ok()
    }

    pub fn layer_index(&self, layer: UserSet) -> Option<usize> {
        self.layers.binary_search(&layer).ok()
    }

    pub fn split_index(&self, group: UserSet, layer: UserSet) -> Option<usize> {
        self.split_lookup.get(&(group, layer)).copied()
    }

    /// Layer indices containing user `k` (1-based), canonical order.
    pub fn user_layers(&self, user: usize) -> Result<&[usize]> {
        self.check_user(user)?;
        Ok(&self.user_layers[user - 1])
    }

    /// Layer indices not containing user `k`.
    pub fn interfering_layers(&self, user: usize) -> Result<Vec<usize>> {
        self.check_user(user)?;
        Ok((0..self.layers.len())
            .filter(|&li| !self.layers[li].contains(user))
            .collect())
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user == 0 || user > self.users {
            return Err(Error::UserOutOfRange {
                user,
                users: self.users,
            });
        }
        Ok(())
    }

    /// Nonempty subsets of `G^(k)`, ordered by ascending mask over `G^(k)`.
    pub fn decode_subsets(&self, user: usize) -> Result<Vec<DecodeSubset>> {
        let own = self.user_layers(user)?;
        if own.len() > MAX_DECODE_LAYERS {
            return Err(Error::InvalidParameter(format!(
                "user {user} decodes {} layers; subset enumeration capped at {MAX_DECODE_LAYERS}",
                own.len()
            )));
        }
        Ok((1u32..(1u32 << own.len()))
            .map(|mask| DecodeSubset {
                mask,
                layers: own
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| mask & (1 << j) != 0)
                    .map(|(_, &li)| li)
                    .collect(),
            })
            .collect())
    }

    /// Total number of decode-subset constraints per subcarrier.
    pub fn decode_subset_count(&self) -> usize {
        self.user_layers
            .iter()
            .map(|l| (1usize << l.len()) - 1)
            .sum()
    }
}

/// See [`SplitStructure::decode_subsets`].
pub fn decode_subsets(structure: &SplitStructure, user: usize) -> Result<Vec<DecodeSubset>> {
    structure.decode_subsets(user)
}

/// Nonnegative split rates `R_{S,G}`, one per split index.
#[derive(Clone, Debug, PartialEq)]
pub struct RateAllocation {
    rates: Vec<f64>,
}

impl RateAllocation {
    pub fn zeros(structure: &SplitStructure) -> Self {
        RateAllocation {
            rates: alloc::vec![0.0; structure.num_splits()],
        }
    }

    pub fn new(structure: &SplitStructure, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != structure.num_splits() {
            return Err(Error::Dimension(format!(
                "{} rates for {} split indices",
                rates.len(),
                structure.num_splits()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter(format!("split rate {r} is not a finite nonnegative value")));
        }
        Ok(RateAllocation { rates })
    }

    /// Clamps tiny negative solver noise to zero.
    pub fn from_solver(structure: &SplitStructure, rates: Vec<f64>) -> Result<Self> {
        Self::new(structure, rates.into_iter().map(|r| r.max(0.0)).collect())
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn get(&self, structure: &SplitStructure, group: UserSet, layer: UserSet) -> Option<f64> {
        structure.split_index(group, layer).map(|i| self.rates[i])
    }

    /// Per-group rates `R_S`, group order.
    pub fn message_rates(&self, structure: &SplitStructure) -> Vec<f64> {
        let mut out = alloc::vec![0.0; structure.groups().len()];
        for (&(si, _), r) in structure.splits().iter().zip(&self.rates) {
            out[si] += r;
        }
        out
    }

    /// Per-layer rates `R̃_G`, layer order.
    pub fn transmission_rates(&self, structure: &SplitStructure) -> Vec<f64> {
        let mut out = alloc::vec![0.0; structure.layers().len()];
        for (&(_, li), r) in structure.splits().iter().zip(&self.rates) {
            out[li] += r;
        }
        out
    }

    /// `Σ_S α_S R_S` with `weights` in group order.
    pub fn weighted_sum(&self, structure: &SplitStructure, weights: &[f64]) -> f64 {
        self.message_rates(structure)
            .iter()
            .zip(weights)
            .map(|(r, a)| a * r)
            .sum()
    }
}

/// `R_S = Σ_{G ∈ G_S} R_{S,G}`.
pub fn message_rate(alloc: &RateAllocation, structure: &SplitStructure, group: UserSet) -> Result<f64> {
    let si = structure
        .group_index(group)
        .ok_or_else(|| Error::UnknownGroup(format!("{group}")))?;
    Ok(structure
        .splits()
        .iter()
        .zip(alloc.rates())
        .filter(|((s, _), _)| *s == si)
        .map(|(_, r)| r)
        .sum())
}

/// `R̃_G = Σ_{S ∈ S_G} R_{S,G}`.
pub fn transmission_rate(alloc: &RateAllocation, structure: &SplitStructure, layer: UserSet) -> Result<f64> {
    let li = structure
        .layer_index(layer)
        .ok_or_else(|| Error::UnknownLayer(format!("{layer}")))?;
    Ok(structure
        .splits()
        .iter()
        .zip(alloc.rates())
        .filter(|((_, l), _)| *l == li)
        .map(|(_, r)| r)
        .sum())
}

/// Special cases of general multicast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ServiceKind {
    Unicast,
    UnicastPlusCommon,
    SingleGroupMulticast,
    MultiGroupMulticast,
    GeneralMulticast,
}

/// Classifies a profile, testing the special cases in order.
pub fn classify_service(profile: &RequestProfile) -> ServiceKind {
    let k = profile.users();
    let i = profile.message_count();
    let req = profile.requests();
    let pairwise_distinct = || {
        (0..k).all(|a| (a + 1..k).all(|b| req[a] != req[b]))
    };

    if i == k && req.iter().all(|r| r.len() == 1) && pairwise_distinct() {
        return ServiceKind::Unicast;
    }
    if i == k + 1 && req.iter().all(|r| r.len() == 2) && pairwise_distinct() {
        let common = profile
            .messages()
            .iter()
            .filter(|&&m| profile.requesters(m).len() == k)
            .count();
        if common == 1 {
            return ServiceKind::UnicastPlusCommon;
        }
    }
    if i == 1 {
        return ServiceKind::SingleGroupMulticast;
    }
    if i > 1 && i < k && req.iter().all(|r| r.len() == 1) {
        return ServiceKind::MultiGroupMulticast;
    }
    ServiceKind::GeneralMulticast
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ServiceKind::Unicast => "unicast",
            ServiceKind::UnicastPlusCommon => "unicast with common message",
            ServiceKind::SingleGroupMulticast => "single-group multicast",
            ServiceKind::MultiGroupMulticast => "multi-group multicast",
            ServiceKind::GeneralMulticast => "general multicast",
        };
        f.write_str(s)
    }
}

/// Formats a set of message labels as `{a,b,c}`.
pub fn format_labels(labels: &[u32]) -> String {
    let mut s = String::from("{");
    for (i, m) in labels.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!("{m}"));
    }
    s.push('}');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn set(users: &[usize]) -> UserSet {
        UserSet::from_users(users.iter().copied()).unwrap()
    }

    fn two_user_profile() -> RequestProfile {
        RequestProfile::from_requests(vec![vec![1, 2, 5, 6], vec![2, 3, 6, 7]]).unwrap()
    }

    fn three_user_profile() -> RequestProfile {
        RequestProfile::from_requests(vec![vec![1, 2, 5, 6], vec![2, 3, 6, 7], vec![5, 6, 9, 10]])
            .unwrap()
    }

    #[test]
    fn two_user_partition() {
        let p = partition_messages(&two_user_profile()).unwrap();
        assert_eq!(p.unit(set(&[1])), Some(&[1, 5][..]));
        assert_eq!(p.unit(set(&[2])), Some(&[3, 7][..]));
        assert_eq!(p.unit(set(&[1, 2])), Some(&[2, 6][..]));
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn three_user_partition_has_six_units() {
        let p = partition_messages(&three_user_profile()).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.unit(set(&[1, 2, 3])), Some(&[6][..]));
    }

    #[test]
    fn single_user_owns_everything() {
        let p = partition_messages(&RequestProfile::from_requests(vec![vec![1, 2, 3]]).unwrap())
            .unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.unit(set(&[1])), Some(&[1, 2, 3][..]));
    }

    #[test]
    fn uncovered_message_is_rejected() {
        let prof = RequestProfile::with_message_count(3, vec![vec![1], vec![2]]).unwrap();
        assert!(matches!(partition_messages(&prof), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn undeclared_request_is_rejected() {
        let prof = RequestProfile::new(vec![1, 2], vec![vec![1], vec![2, 9]]).unwrap();
        assert!(partition_messages(&prof).is_err());
    }

    #[test]
    fn empty_request_is_rejected() {
        assert!(RequestProfile::from_requests(vec![vec![1], vec![]]).is_err());
        assert!(RequestProfile::from_requests(vec![vec![1]; 17]).is_err());
    }

    #[test]
    fn split_counts_match_examples() {
        let s1 = build_layers(&partition_messages(&two_user_profile()).unwrap(), LayerPolicy::FullGeneral)
            .unwrap();
        assert_eq!(s1.layers(), &[set(&[1]), set(&[2]), set(&[1, 2])]);
        assert_eq!(s1.num_splits(), 5);

        let s2 = build_layers(&partition_messages(&three_user_profile()).unwrap(), LayerPolicy::FullGeneral)
            .unwrap();
        assert_eq!(s2.layers().len(), 7);
        assert_eq!(s2.num_splits(), 17);
    }

    #[test]
    fn no_split_is_identity() {
        let s = build_layers(&partition_messages(&three_user_profile()).unwrap(), LayerPolicy::NoSplit)
            .unwrap();
        assert_eq!(s.layers(), s.groups());
        assert_eq!(s.num_splits(), s.groups().len());
    }

    #[test]
    fn full_group_never_splits() {
        let s = SplitStructure::from_groups(3, vec![set(&[1, 2, 3])], LayerPolicy::OneLayer)
            .unwrap();
        assert_eq!(s.num_splits(), 1);
    }

    #[test]
    fn decode_subset_counts() {
        let s1 = build_layers(&partition_messages(&two_user_profile()).unwrap(), LayerPolicy::FullGeneral)
            .unwrap();
        assert_eq!(s1.decode_subsets(1).unwrap().len(), 3);
        let s2 = build_layers(&partition_messages(&three_user_profile()).unwrap(), LayerPolicy::FullGeneral)
            .unwrap();
        assert_eq!(s2.decode_subsets(1).unwrap().len(), 15);
        assert!(s2.decode_subsets(0).is_err());
        assert!(s2.decode_subsets(4).is_err());

        let single = SplitStructure::from_groups(2, vec![set(&[1, 2])], LayerPolicy::FullGeneral)
            .unwrap();
        let d = single.decode_subsets(1).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].layers, vec![0]);
    }

    #[test]
    fn rate_maps() {
        let s = build_layers(&partition_messages(&two_user_profile()).unwrap(), LayerPolicy::FullGeneral)
            .unwrap();
        let mut r = vec![0.0; s.num_splits()];
        r[s.split_index(set(&[1]), set(&[1])).unwrap()] = 2.0;
        r[s.split_index(set(&[1]), set(&[1, 2])).unwrap()] = 3.0;
        r[s.split_index(set(&[1, 2]), set(&[1, 2])).unwrap()] = 7.0;
        let a = RateAllocation::new(&s, r).unwrap();
        assert_eq!(message_rate(&a, &s, set(&[1])).unwrap(), 5.0);
        assert_eq!(transmission_rate(&a, &s, set(&[1, 2])).unwrap(), 10.0);
        assert!(message_rate(&a, &s, set(&[3])).is_err());
        assert_eq!(a.weighted_sum(&s, &[1.0, 0.0, 0.5]), 8.5);
    }

    #[test]
    fn classification() {
        let uni = RequestProfile::from_requests(vec![vec![1], vec![2], vec![3]]).unwrap();
        assert_eq!(classify_service(&uni), ServiceKind::Unicast);
        let sg = RequestProfile::from_requests(vec![vec![1], vec![1]]).unwrap();
        assert_eq!(classify_service(&sg), ServiceKind::SingleGroupMulticast);
        let common = RequestProfile::from_requests(vec![vec![1, 3], vec![2, 3]]).unwrap();
        assert_eq!(classify_service(&common), ServiceKind::UnicastPlusCommon);
        let mg = RequestProfile::from_requests(vec![vec![1], vec![1], vec![2]]).unwrap();
        assert_eq!(classify_service(&mg), ServiceKind::MultiGroupMulticast);
    }

    #[test]
    fn superset_enumeration_is_ascending() {
        let u = UserSet::full(3).unwrap();
        let v: Vec<_> = set(&[2]).supersets_within(u).collect();
        assert_eq!(v, vec![set(&[2]), set(&[1, 2]), set(&[2, 3]), set(&[1, 2, 3])]);
        assert_eq!(u.supersets_within(u).count(), 1);
    }
}
