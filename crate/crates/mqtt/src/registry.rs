//! Subscription registry keyed by topic-filter levels.

use std::collections::{BTreeMap, HashMap};

use crate::codec::QoS;

#[derive(Debug, Default)]
struct Node {
    children: HashMap<String, Node>,
    subscribers: BTreeMap<String, QoS>,
}

impl Node {
    fn is_empty(&self) -> bool {
        self.children.is_empty() && self.subscribers.is_empty()
    }
}

/// A trie of topic filters. `+` and `#` are stored as ordinary level keys
/// and interpreted during matching.
#[derive(Debug, Default)]
pub struct SubscriptionTree {
    root: Node,
    len: usize,
}

impl SubscriptionTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of (client, filter) subscriptions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Adds or replaces a subscription. Returns true if it replaced one.
    pub fn insert(&mut self, filter: &str, client_id: &str, qos: QoS) -> bool {
        let mut node = &mut self.root;
        for level in filter.split('/') {
            node = node.children.entry(level.to_owned()).or_default();
        }
        let replaced = node.subscribers.insert(client_id.to_owned(), qos).is_some();
        if !replaced {
            self.len += 1;
        }
        replaced
    }

    pub fn remove(&mut self, filter: &str, client_id: &str) -> bool {
        let levels: Vec<&str> = filter.split('/').collect();
        let removed = remove_rec(&mut self.root, &levels, client_id);
        if removed {
            self.len -= 1;
        }
        removed
    }

    /// Every client with at least one matching filter, at the highest QoS
    /// among its matching subscriptions.
    pub fn matches(&self, topic: &str) -> BTreeMap<String, QoS> {
        let levels: Vec<&str> = topic.split('/').collect();
        let mut out = BTreeMap::new();
        let dollar = topic.starts_with('$');
        collect(&self.root, &levels, dollar, &mut out);
        out
    }
}

fn remove_rec(node: &mut Node, levels: &[&str], client_id: &str) -> bool {
    match levels.split_first() {
        None => node.subscribers.remove(client_id).is_some(),
        Some((head, tail)) => {
            let Some(child) = node.children.get_mut(*head) else {
                return false;
            };
            let removed = remove_rec(child, tail, client_id);
            if child.is_empty() {
                node.children.remove(*head);
            }
            removed
        }
    }
}

fn merge(out: &mut BTreeMap<String, QoS>, subscribers: &BTreeMap<String, QoS>) {
    for (client, &qos) in subscribers {
        out.entry(client.clone())
            .and_modify(|q| *q = (*q).max(qos))
            .or_insert(qos);
    }
}

fn collect(node: &Node, levels: &[&str], skip_wildcards: bool, out: &mut BTreeMap<String, QoS>) {
    if !skip_wildcards {
        if let Some(hash) = node.children.get("#") {
            merge(out, &hash.subscribers);
        }
    }
    let Some((head, tail)) = levels.split_first() else {
        merge(out, &node.subscribers);
        return;
    };
    if let Some(child) = node.children.get(*head) {
        collect(child, tail, false, out);
    }
    if !skip_wildcards {
        if let Some(plus) = node.children.get("+") {
            collect(plus, tail, false, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topic::topic_matches;
    use proptest::prelude::*;

    #[test]
    fn insert_match_remove() {
        let mut t = SubscriptionTree::new();
        assert!(!t.insert("lot/+/slot/+/ir", "svc", QoS::AtLeastOnce));
        assert!(!t.insert("lot/#", "mon", QoS::AtMostOnce));
        assert!(!t.insert("lot/L1/slot/S1/ir", "mon", QoS::AtLeastOnce));
        assert!(t.insert("lot/#", "mon", QoS::AtMostOnce));
        assert_eq!(t.len(), 3);

        let m = t.matches("lot/L1/slot/S1/ir");
        assert_eq!(m.get("svc"), Some(&QoS::AtLeastOnce));
        assert_eq!(m.get("mon"), Some(&QoS::AtLeastOnce));

        let m = t.matches("lot/L1/display");
        assert_eq!(m.keys().collect::<Vec<_>>(), ["mon"]);
        assert_eq!(t.matches("lot").len(), 1);

        assert!(t.remove("lot/#", "mon"));
        assert!(!t.remove("lot/#", "mon"));
        assert!(t.matches("lot/L1/display").is_empty());
        assert!(t.remove("lot/L1/slot/S1/ir", "mon"));
        assert!(t.remove("lot/+/slot/+/ir", "svc"));
        assert!(t.is_empty());
        assert!(t.root.is_empty());
    }

    fn level() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "", "$x"]).prop_map(str::to_owned)
    }

    fn filter() -> impl Strategy<Value = String> {
        (
            prop::collection::vec(prop_oneof![level(), Just("+".to_owned())], 1..4),
            any::<bool>(),
        )
            .prop_map(|(mut levels, hash)| {
                if hash {
                    levels.push("#".into());
                }
                levels.join("/")
            })
    }

    proptest! {
        #[test]
        fn agrees_with_linear_scan(
            subs in prop::collection::vec((filter(), 0usize..4, 0u8..2), 0..12),
            topic in prop::collection::vec(level(), 1..5).prop_map(|l| l.join("/")),
        ) {
            let mut tree = SubscriptionTree::new();
            let mut expected: BTreeMap<String, QoS> = BTreeMap::new();
            for (f, client, qos) in &subs {
                tree.insert(f, &format!("c{client}"), QoS::from_u8(*qos).unwrap());
            }
            // last write per (filter, client) wins, then max over matches
            let mut latest: BTreeMap<(String, String), QoS> = BTreeMap::new();
            for (f, client, qos) in &subs {
                latest.insert((f.clone(), format!("c{client}")), QoS::from_u8(*qos).unwrap());
            }
            for ((f, client), qos) in &latest {
                if topic_matches(f, &topic) {
                    let e = expected.entry(client.clone()).or_insert(*qos);
                    *e = (*e).max(*qos);
                }
            }
            prop_assert_eq!(tree.matches(&topic), expected);
            prop_assert_eq!(tree.len(), latest.len());
        }
    }
}
