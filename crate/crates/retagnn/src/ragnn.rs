//! Relational attentive message passing over an enclosing subgraph.
//!
//! Each layer updates node i as
//! `x_i' = W_o x_i + sum_r sum_{j in Gamma_r(i)} alpha_ij W_r x_j`, where the
//! attention logit of edge (i, j) is
//! `leaky_relu(a^T [W_o x_i (+) W_r x_j])`, softmax-normalized over all of
//! i's neighbors jointly across relations. The layer runs as dense masked
//! matrix ops: the per-relation adjacency masks select edges, and because any
//! ordered kind pair admits at most one relation, a single n-by-n logit
//! matrix covers the union.

use crate::graph::Relation;
use crate::numkernel::{Tape, Var};
use crate::subgraph::EnclosingSubgraph;

/// Handles to one layer's parameters on a tape: the self transform, one
/// matrix per relation, and the length-2d attention vector.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_self: Var,
    pub w_rel: [Var; 4],
    pub attn: Var,
}

#[derive(Debug, Clone)]
pub struct StackVars {
    pub layers: Vec<LayerVars>,
}

/// Dense per-subgraph constants shared by every layer and epoch: relation
/// adjacency indicators and the additive softmax mask over the edge union.
#[derive(Debug, Clone)]
pub struct Topology {
    pub n: usize,
    rel_mask: [Vec<f64>; 4],
    softmax_mask: Vec<f64>,
}

impl Topology {
    pub fn from_subgraph(sub: &EnclosingSubgraph) -> Self {
        let n = sub.node_count();
        let mut rel_mask = [
            vec![0.0; n * n],
            vec![0.0; n * n],
            vec![0.0; n * n],
            vec![0.0; n * n],
        ];
        let mut softmax_mask = vec![f64::NEG_INFINITY; n * n];
        for i in 0..n {
            for r in Relation::ALL {
                for j in sub.neighbors_flat(i, r) {
                    rel_mask[r.tag()][i * n + j] = 1.0;
                    softmax_mask[i * n + j] = 0.0;
                }
            }
        }
        Topology {
            n,
            rel_mask,
            softmax_mask,
        }
    }
}

/// Attention weights of one node over an explicit neighbor list, computed the
/// way the layer equation reads: per-neighbor concat, dot with `a`, leaky
/// ReLU, softmax. Returns `None` for an empty neighbor list.
pub fn attention_weights(
    tape: &mut Tape,
    layer: &LayerVars,
    x_i: Var,
    neighbors: &[(Relation, Var)],
    slope: f64,
) -> Option<Var> {
    if neighbors.is_empty() {
        return None;
    }
    let d = tape.shape(x_i)[0];
    let xi_row = tape.reshape(x_i, vec![1, d]);
    let w_self_t = tape.transpose(layer.w_self);
    let self_part = tape.matmul(xi_row, w_self_t);
    let self_vec = tape.reshape(self_part, vec![d]);

    let mut logits = Vec::with_capacity(neighbors.len());
    for &(relation, x_j) in neighbors {
        let xj_row = tape.reshape(x_j, vec![1, d]);
        let w_rel_t = tape.transpose(layer.w_rel[relation.tag()]);
        let nbr_part = tape.matmul(xj_row, w_rel_t);
        let nbr_vec = tape.reshape(nbr_part, vec![d]);
        let joint = tape.concat(&[self_vec, nbr_vec]);
        let score = tape.dot(layer.attn, joint);
        let activated = tape.leaky_relu(score, slope);
        logits.push(tape.reshape(activated, vec![1]));
    }
    let stacked = tape.concat(&logits);
    let zeros = vec![0.0; neighbors.len()];
    Some(tape.softmax_masked(stacked, &zeros))
}

/// One message-passing layer over all nodes at once. With `use_attention`
/// off, the learned logits are replaced by zeros, so every neighbor weighs
/// 1/deg(i) regardless of relation.
pub fn layer_forward(
    tape: &mut Tape,
    layer: &LayerVars,
    topo: &Topology,
    x: Var,
    slope: f64,
    use_attention: bool,
) -> Var {
    let n = topo.n;
    let d = tape.shape(x)[1];
    assert_eq!(tape.shape(x)[0], n, "feature rows must match subgraph nodes");

    let w_self_t = tape.transpose(layer.w_self);
    let self_msgs = tape.matmul(x, w_self_t); // n x d
    let rel_msgs: Vec<Var> = (0..4)
        .map(|r| {
            let w_t = tape.transpose(layer.w_rel[r]);
            tape.matmul(x, w_t)
        })
        .collect();

    let alpha = if use_attention {
        let a_self = tape.slice(layer.attn, 0, d);
        let a_nbr = tape.slice(layer.attn, d, d);
        let a_self_col = tape.reshape(a_self, vec![d, 1]);
        let a_nbr_col = tape.reshape(a_nbr, vec![d, 1]);

        // logit[i][j] = left[i] + right_{R(i,j)}[j] on edges
        let left = tape.matmul(self_msgs, a_self_col); // n x 1
        let ones_row = tape.constant(vec![1, n], vec![1.0; n]);
        let mut logits = tape.matmul(left, ones_row); // broadcast columns
        let ones_col = tape.constant(vec![n, 1], vec![1.0; n]);
        for (msgs, rel_mask) in rel_msgs.iter().zip(&topo.rel_mask) {
            let right = tape.matmul(*msgs, a_nbr_col); // n x 1
            let right_row = tape.transpose(right);
            let spread = tape.matmul(ones_col, right_row); // broadcast rows
            let mask = tape.constant(vec![n, n], rel_mask.clone());
            let masked = tape.mul(spread, mask);
            logits = tape.add(logits, masked);
        }
        let activated = tape.leaky_relu(logits, slope);
        tape.softmax_masked(activated, &topo.softmax_mask)
    } else {
        let flat = tape.zeros(vec![n, n]);
        tape.softmax_masked(flat, &topo.softmax_mask)
    };

    let mut out = self_msgs;
    for (msgs, rel_mask) in rel_msgs.iter().zip(&topo.rel_mask) {
        let mask = tape.constant(vec![n, n], rel_mask.clone());
        let weights = tape.mul(alpha, mask);
        let aggregated = tape.matmul(weights, *msgs);
        out = tape.add(out, aggregated);
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct StackOptions {
    pub leaky_slope: f64,
    pub use_attention: bool,
    /// Off by default: the update rule carries no nonlinearity between
    /// layers; this flag inserts a leaky ReLU as an extension.
    pub inter_layer_activation: bool,
}

/// Apply the stack's layers in order over the subgraph features.
pub fn stack_forward(
    tape: &mut Tape,
    stack: &StackVars,
    topo: &Topology,
    x0: Var,
    opts: StackOptions,
) -> Var {
    assert!(!stack.layers.is_empty(), "stack depth must be at least 1");
    let mut x = x0;
    for (i, layer) in stack.layers.iter().enumerate() {
        x = layer_forward(tape, layer, topo, x, opts.leaky_slope, opts.use_attention);
        if opts.inter_layer_activation && i + 1 < stack.layers.len() {
            x = tape.leaky_relu(x, opts.leaky_slope);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{toy_graph, NodeRef};
    use crate::numkernel::Tensor;
    use crate::subgraph::{extract, ExtractOptions};

    fn identity(d: usize) -> Tensor {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Tensor::from_vec(vec![d, d], data)
    }

    fn toy_subgraph() -> EnclosingSubgraph {
        let g = toy_graph();
        extract(
            &g,
            &[NodeRef::user(0), NodeRef::item(1)],
            2,
            &[],
            ExtractOptions::default(),
        )
    }

    fn leaf_layer(tape: &mut Tape, d: usize, w_self: Tensor, w_rel: [Tensor; 4], attn: Tensor) -> LayerVars {
        let w_self = tape.leaf("w_self", &w_self);
        let w_rel = [
            tape.leaf("w_rel0", &w_rel[0]),
            tape.leaf("w_rel1", &w_rel[1]),
            tape.leaf("w_rel2", &w_rel[2]),
            tape.leaf("w_rel3", &w_rel[3]),
        ];
        let attn = tape.leaf("attn", &attn);
        assert_eq!(tape.shape(attn), &[2 * d]);
        LayerVars {
            w_self,
            w_rel,
            attn,
        }
    }

    #[test]
    fn identical_neighbors_share_attention() {
        let d = 3;
        let mut tape = Tape::new();
        let layer = leaf_layer(
            &mut tape,
            d,
            identity(d),
            [identity(d), identity(d), identity(d), identity(d)],
            Tensor::from_vec(vec![2 * d], vec![0.3; 2 * d]),
        );
        let x_i = tape.constant(vec![d], vec![1.0, 0.5, -0.2]);
        let x_j = tape.constant(vec![d], vec![0.4, 0.1, 0.9]);
        let weights = attention_weights(
            &mut tape,
            &layer,
            x_i,
            &[
                (Relation::UserLikesItem, x_j),
                (Relation::UserLikesItem, x_j),
            ],
            0.2,
        )
        .unwrap();
        let w = tape.value(weights);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);

        let single = attention_weights(
            &mut tape,
            &layer,
            x_i,
            &[(Relation::UserLikesItem, x_j)],
            0.2,
        )
        .unwrap();
        assert!((tape.value(single)[0] - 1.0).abs() < 1e-12);

        let empty = attention_weights(&mut tape, &layer, x_i, &[], 0.2);
        assert!(empty.is_none());
    }

    #[test]
    fn isolated_node_with_identity_self_keeps_embedding() {
        // Subgraph with one isolated attribute (a1 has no edges).
        let g = crate::graph::TripartiteGraph::from_edges(1, 1, 1, &[], (0, 0)).unwrap();
        let sub = extract(
            &g,
            &[NodeRef::user(0), NodeRef::item(0), NodeRef::attr(0)],
            1,
            &[],
            ExtractOptions::default(),
        );
        let topo = Topology::from_subgraph(&sub);
        let d = 2;
        let mut tape = Tape::new();
        let layer = leaf_layer(
            &mut tape,
            d,
            identity(d),
            [identity(d), identity(d), identity(d), identity(d)],
            Tensor::from_vec(vec![2 * d], vec![0.1; 2 * d]),
        );
        let x = tape.constant(vec![3, d], vec![0.5, -1.5, 2.0, 0.25, -0.75, 1.0]);
        let out = layer_forward(&mut tape, &layer, &topo, x, 0.2, true);
        assert_eq!(tape.value(out), tape.value(x));
    }

    #[test]
    fn zero_features_stay_zero() {
        let sub = toy_subgraph();
        let topo = Topology::from_subgraph(&sub);
        let d = 2;
        let mut tape = Tape::new();
        let layer = leaf_layer(
            &mut tape,
            d,
            identity(d),
            [identity(d), identity(d), identity(d), identity(d)],
            Tensor::from_vec(vec![2 * d], vec![0.7; 2 * d]),
        );
        let x = tape.zeros(vec![sub.node_count(), d]);
        let out = layer_forward(&mut tape, &layer, &topo, x, 0.2, true);
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_layer_matches_per_node_attention_route() {
        // The dense masked formulation and the explicit neighbor-list route
        // must produce the same weights and the same update.
        let sub = toy_subgraph();
        let topo = Topology::from_subgraph(&sub);
        let n = sub.node_count();
        let d = 3;
        let mut rng_state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let rand_mat = |next: &mut dyn FnMut() -> f64, r: usize, c: usize| {
            Tensor::from_vec(vec![r, c], (0..r * c).map(|_| next()).collect())
        };

        let mut tape = Tape::new();
        let w_self = rand_mat(&mut next, d, d);
        let w_rel = [
            rand_mat(&mut next, d, d),
            rand_mat(&mut next, d, d),
            rand_mat(&mut next, d, d),
            rand_mat(&mut next, d, d),
        ];
        let attn = Tensor::from_vec(vec![2 * d], (0..2 * d).map(|_| next()).collect());
        let layer = leaf_layer(&mut tape, d, w_self.clone(), w_rel.clone(), attn.clone());
        let x_data: Vec<f64> = (0..n * d).map(|_| next()).collect();
        let x = tape.constant(vec![n, d], x_data.clone());
        let dense = layer_forward(&mut tape, &layer, &topo, x, 0.2, true);
        let dense_out = tape.value(dense).to_vec();

        // Naive per-node recomputation on a fresh tape.
        let mut naive = vec![0.0; n * d];
        for i in 0..n {
            let mut tape2 = Tape::new();
            let layer2 = leaf_layer(&mut tape2, d, w_self.clone(), w_rel.clone(), attn.clone());
            let x_i = tape2.constant(vec![d], x_data[i * d..(i + 1) * d].to_vec());
            let mut nbrs = Vec::new();
            for r in Relation::ALL {
                for j in sub.neighbors_flat(i, r) {
                    let x_j = tape2.constant(vec![d], x_data[j * d..(j + 1) * d].to_vec());
                    nbrs.push(((r, j), x_j));
                }
            }
            let pairs: Vec<(Relation, Var)> =
                nbrs.iter().map(|&((r, _), v)| (r, v)).collect();
            let xi_row = tape2.reshape(x_i, vec![1, d]);
            let w_self_t = tape2.transpose(layer2.w_self);
            let self_term = tape2.matmul(xi_row, w_self_t);
            let mut row = tape2.value(self_term).to_vec();
            if let Some(weights) = attention_weights(&mut tape2, &layer2, x_i, &pairs, 0.2) {
                let w = tape2.value(weights).to_vec();
                for (&((r, j), _), &alpha) in nbrs.iter().zip(w.iter()) {
                    let xj_row = tape2.constant(vec![1, d], x_data[j * d..(j + 1) * d].to_vec());
                    let w_rel_t = tape2.transpose(layer2.w_rel[r.tag()]);
                    let msg = tape2.matmul(xj_row, w_rel_t);
                    for (acc, m) in row.iter_mut().zip(tape2.value(msg)) {
                        *acc += alpha * m;
                    }
                }
            }
            naive[i * d..(i + 1) * d].copy_from_slice(&row);
        }
        for (a, b) in dense_out.iter().zip(&naive) {
            assert!((a - b).abs() < 1e-9, "dense {a} vs naive {b}");
        }
    }

    #[test]
    fn permutation_equivariance() {
        // Relabeling item global ids permutes subgraph-local rows; outputs
        // must permute identically.
        let d = 2;
        let pairs = [
            (NodeRef::user(0), NodeRef::item(0)),
            (NodeRef::user(0), NodeRef::item(1)),
            (NodeRef::user(1), NodeRef::item(1)),
            (NodeRef::item(0), NodeRef::attr(0)),
            (NodeRef::item(1), NodeRef::attr(0)),
        ];
        let g1 = crate::graph::TripartiteGraph::from_edges(2, 2, 1, &pairs, (0, 0)).unwrap();
        // Swap item ids 0 <-> 1.
        let swapped: Vec<(NodeRef, NodeRef)> = pairs
            .iter()
            .map(|&(a, b)| {
                let flip = |n: NodeRef| {
                    if n.kind == crate::graph::NodeKind::Item {
                        NodeRef::item(1 - n.index)
                    } else {
                        n
                    }
                };
                (flip(a), flip(b))
            })
            .collect();
        let g2 = crate::graph::TripartiteGraph::from_edges(2, 2, 1, &swapped, (0, 0)).unwrap();

        let seeds = [NodeRef::user(0)];
        let sub1 = extract(&g1, &seeds, 2, &[], ExtractOptions::default());
        let sub2 = extract(&g2, &seeds, 2, &[], ExtractOptions::default());
        assert_eq!(sub1.node_count(), sub2.node_count());

        let features = |node: NodeRef| -> Vec<f64> {
            // Node-identity features keyed by the ORIGINAL labeling.
            match (node.kind, node.index) {
                (crate::graph::NodeKind::User, i) => vec![0.1 + i as f64, -0.3],
                (crate::graph::NodeKind::Item, i) => vec![1.0 + i as f64 * 0.5, 0.4],
                (crate::graph::NodeKind::Attr, i) => vec![-0.7, 0.9 + i as f64],
            }
        };
        let unflip = |n: NodeRef| {
            if n.kind == crate::graph::NodeKind::Item {
                NodeRef::item(1 - n.index)
            } else {
                n
            }
        };

        let run = |sub: &EnclosingSubgraph, original_of: &dyn Fn(NodeRef) -> NodeRef| {
            let topo = Topology::from_subgraph(sub);
            let mut tape = Tape::new();
            let layer = leaf_layer(
                &mut tape,
                d,
                Tensor::from_vec(vec![d, d], vec![0.5, -0.2, 0.3, 0.8]),
                [
                    Tensor::from_vec(vec![d, d], vec![0.1, 0.2, -0.3, 0.4]),
                    Tensor::from_vec(vec![d, d], vec![0.6, -0.1, 0.2, 0.3]),
                    Tensor::from_vec(vec![d, d], vec![-0.4, 0.5, 0.1, 0.2]),
                    Tensor::from_vec(vec![d, d], vec![0.2, 0.2, -0.6, 0.1]),
                ],
                Tensor::from_vec(vec![2 * d], vec![0.3, -0.5, 0.2, 0.7]),
            );
            let mut x = Vec::new();
            for &node in &sub.local_to_global {
                x.extend(features(original_of(node)));
            }
            let n = sub.node_count();
            let xv = tape.constant(vec![n, d], x);
            let out = layer_forward(&mut tape, &layer, &topo, xv, 0.2, true);
            let values = tape.value(out).to_vec();
            sub.local_to_global
                .iter()
                .zip(values.chunks(d))
                .map(|(&node, row)| (original_of(node), row.to_vec()))
                .collect::<std::collections::BTreeMap<_, _>>()
        };

        let by_node_1 = run(&sub1, &|n| n);
        let by_node_2 = run(&sub2, &unflip);
        assert_eq!(by_node_1.len(), by_node_2.len());
        for (node, row1) in &by_node_1 {
            let row2 = &by_node_2[node];
            for (a, b) in row1.iter().zip(row2) {
                assert!((a - b).abs() < 1e-9, "{node:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn three_node_path_matches_hand_computation() {
        // user0 - item0 - attr0 with hand-set 2x2 parameters; expected values
        // worked out independently to full precision.
        let pairs = [
            (NodeRef::user(0), NodeRef::item(0)),
            (NodeRef::item(0), NodeRef::attr(0)),
        ];
        let g = crate::graph::TripartiteGraph::from_edges(1, 1, 1, &pairs, (0, 0)).unwrap();
        let sub = extract(
            &g,
            &[NodeRef::user(0), NodeRef::item(0), NodeRef::attr(0)],
            0,
            &[],
            ExtractOptions::default(),
        );
        let topo = Topology::from_subgraph(&sub);
        let mut tape = Tape::new();
        let layer = leaf_layer(
            &mut tape,
            2,
            Tensor::from_vec(vec![2, 2], vec![1.0, 0.5, -0.25, 0.75]),
            [
                Tensor::from_vec(vec![2, 2], vec![0.2, -0.1, 0.4, 0.3]),
                Tensor::from_vec(vec![2, 2], vec![0.6, 0.1, -0.2, 0.5]),
                Tensor::from_vec(vec![2, 2], vec![0.3, 0.2, 0.1, -0.4]),
                Tensor::from_vec(vec![2, 2], vec![-0.5, 0.25, 0.35, 0.15]),
            ],
            Tensor::from_vec(vec![4], vec![0.3, -0.2, 0.1, 0.4]),
        );
        let x = tape.constant(vec![3, 2], vec![1.0, -0.5, 0.25, 0.75, -0.6, 0.4]);
        let out = layer_forward(&mut tape, &layer, &topo, x, 0.2, true);
        let expected = [
            0.725,
            -0.30000000000000004,
            0.8491225021323188,
            0.16531049924548719,
            -0.33749999999999997,
            0.65,
        ];
        for (got, want) in tape.value(out).iter().zip(&expected) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn every_present_relation_receives_gradient() {
        let sub = toy_subgraph();
        let topo = Topology::from_subgraph(&sub);
        let d = 2;
        let mut tape = Tape::new();
        let mk = |seed: f64| {
            Tensor::from_vec(
                vec![d, d],
                (0..d * d).map(|i| 0.1 + seed * (i as f64 + 1.0) * 0.07).collect(),
            )
            .with_grad()
        };
        let layer = leaf_layer(
            &mut tape,
            d,
            mk(0.3),
            [mk(0.5), mk(0.7), mk(0.9), mk(1.1)],
            Tensor::from_vec(vec![2 * d], vec![0.2, -0.3, 0.4, 0.1]).with_grad(),
        );
        let n = sub.node_count();
        let x = tape.constant(
            vec![n, d],
            (0..n * d).map(|i| 0.3 + 0.1 * i as f64).collect(),
        );
        let out = layer_forward(&mut tape, &layer, &topo, x, 0.2, true);
        let loss = tape.frobenius_sq(out);
        tape.backward(loss).unwrap();
        for (r, var) in layer.w_rel.iter().enumerate() {
            let grad = tape.grad(*var).expect("relation matrix tracked");
            assert!(
                grad.iter().any(|g| g.abs() > 1e-12),
                "relation {r} got a zero gradient"
            );
        }
    }

    #[test]
    fn relation_matrices_distinguish_relations() {
        // With symmetric inputs and W_r = r * I, a node adjacent through
        // different relations gets different aggregates.
        let sub = toy_subgraph();
        let topo = Topology::from_subgraph(&sub);
        let d = 2;
        let mut tape = Tape::new();
        let scaled = |c: f64| {
            let mut t = identity(d);
            for v in t.data_mut() {
                *v *= c;
            }
            t
        };
        let layer = leaf_layer(
            &mut tape,
            d,
            identity(d),
            [scaled(1.0), scaled(2.0), scaled(3.0), scaled(4.0)],
            Tensor::from_vec(vec![2 * d], vec![0.0; 2 * d]),
        );
        let n = sub.node_count();
        let x = tape.constant(vec![n, d], vec![1.0; n * d]);
        let out = layer_forward(&mut tape, &layer, &topo, x, 0.2, true);
        // Items see both users (relation 1) and attrs (relation 3); users see
        // only items (relation 0). Their outputs must differ.
        let user_row = &tape.value(out)[0..d];
        let item_row_start = sub.local_of(NodeRef::item(0)).unwrap() * d;
        let item_row = &tape.value(out)[item_row_start..item_row_start + d];
        assert!(user_row != item_row);
    }
}
