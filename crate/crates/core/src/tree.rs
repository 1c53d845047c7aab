//! Nucleus-sampling variant of two-step-draft-then-verify.
//!
//! Draft step 1 appends `k` adaptive tokens and turns each adaptive position
//! into a truncated distribution. The top candidates per depth form a tree
//! that draft step 2 evaluates in a single pass under a tree attention mask.
//! Verification samples from the model's own conditional at the current node
//! and descends while the sample matches a child, so every committed token is
//! an exact draw from the target distribution.
//!
//! Step 1 only sees adaptive tokens after the committed prefix, so it cannot
//! tell siblings apart: every node at depth `d` gets the same candidate set.

use std::time::Instant;

use crate::draft::{adaptive_pass, clip_block, AdaptiveTokens, GenStats};
use crate::error::{DecodeError, ModelError};
use crate::greedy::{generate_greedy, GreedyOptions};
use crate::model::{AttnMask, KvCache, Logits, ModelParams, TokenId};
use crate::sampling::{truncate_dist, SamplingConfig, SessionRng, TruncatedDist};

pub const DEFAULT_NODE_BUDGET: usize = 512;

/// Number of children kept per node at each depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchProfile {
    widths: Vec<usize>,
}

impl BranchProfile {
    pub fn new(widths: Vec<usize>) -> Result<Self, DecodeError> {
        if widths.contains(&0) {
            return Err(DecodeError::Tree("branch widths must be at least 1".into()));
        }
        Ok(Self { widths })
    }

    /// `[3, 2, 2, 1, 1, ...]`, `k` entries.
    pub fn default_for(k: usize) -> Self {
        let widths = (0..k)
            .map(|d| match d {
                0 => 3,
                1 | 2 => 2,
                _ => 1,
            })
            .collect();
        Self { widths }
    }

    pub fn chain(k: usize) -> Self {
        Self { widths: vec![1; k] }
    }

    /// Width at `depth`; depths past the end of the profile use 1.
    pub fn width(&self, depth: usize) -> usize {
        self.widths.get(depth).copied().unwrap_or(1)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Nodes in a full tree of `depth` levels.
    pub fn node_count(&self, depth: usize) -> usize {
        let mut total = 0;
        let mut level = 1;
        for d in 0..depth {
            level *= self.width(d);
            total += level;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeNode {
    pub token: TokenId,
    /// `None` for depth-0 nodes, which hang off the committed prefix.
    pub parent: Option<usize>,
    pub depth: usize,
}

/// Candidate tree, flattened so every parent precedes its children.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DraftTree {
    nodes: Vec<TreeNode>,
}

impl DraftTree {
    /// Validates parent-before-child order and depth bookkeeping.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self, DecodeError> {
        for (i, n) in nodes.iter().enumerate() {
            let want = match n.parent {
                None => 0,
                Some(p) if p < i => nodes[p].depth + 1,
                Some(p) => {
                    return Err(DecodeError::Tree(format!(
                        "node {i} has parent {p} that does not precede it"
                    )))
                }
            };
            if n.depth != want {
                return Err(DecodeError::Tree(format!(
                    "node {i} has depth {} but its parent implies {want}",
                    n.depth
                )));
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.nodes.iter().map(|n| n.token).collect()
    }

    /// Number of levels.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth + 1).max().unwrap_or(0)
    }

    pub fn children(&self, parent: Option<usize>) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.parent == parent)
            .map(|(i, _)| i)
    }

    /// Indices of the ancestors of `i` and `i` itself, root first.
    pub fn path(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut cur = self.nodes[i].parent;
        while let Some(p) = cur {
            path.push(p);
            cur = self.nodes[p].parent;
        }
        path.reverse();
        path
    }

    /// Tokens along [`DraftTree::path`].
    pub fn branch(&self, i: usize) -> Vec<TokenId> {
        self.path(i).into_iter().map(|j| self.nodes[j].token).collect()
    }
}

/// Depth `d` children are the `width(d)` most probable tokens of `dists[d]`.
pub fn build_tree(
    dists: &[TruncatedDist],
    profile: &BranchProfile,
    node_budget: usize,
) -> Result<DraftTree, DecodeError> {
    let mut nodes = Vec::new();
    let mut frontier: Vec<Option<usize>> = vec![None];
    for (depth, dist) in dists.iter().enumerate() {
        let cands = dist.top(profile.width(depth));
        let mut next = Vec::with_capacity(frontier.len() * cands.len());
        for &parent in &frontier {
            for &token in &cands {
                next.push(Some(nodes.len()));
                nodes.push(TreeNode { token, parent, depth });
            }
        }
        if nodes.len() > node_budget {
            return Err(DecodeError::NodeBudget {
                nodes: nodes.len(),
                budget: node_budget,
            });
        }
        frontier = next;
    }
    Ok(DraftTree { nodes })
}

/// Mask rows for the flattened tree placed after `prefix_len` positions: each
/// node sees the whole prefix, its ancestors and itself. Node positions are
/// `prefix_len + depth`.
pub fn build_tree_mask(tree: &DraftTree, prefix_len: usize) -> (AttnMask, Vec<usize>) {
    let n = tree.len();
    let mut mask = AttnMask::from_fn(n, prefix_len + n, |_, c| c < prefix_len);
    for i in 0..n {
        for j in tree.path(i) {
            mask.set(i, prefix_len + j, true);
        }
    }
    let positions = tree.nodes.iter().map(|n| prefix_len + n.depth).collect();
    (mask, positions)
}

/// Draft step 2: feeds `root` (the token sampled at the end of the committed
/// prefix) followed by the flattened tree. Row 0 of the result belongs to
/// `root`, row `1 + i` to node `i`.
pub fn tree_forward(
    params: &ModelParams,
    cache: &mut KvCache,
    root: TokenId,
    tree: &DraftTree,
) -> Result<Logits, DecodeError> {
    let n = cache.len();
    let max_seq = params.config().max_seq;
    let needed = n + 1 + tree.depth();
    if needed > max_seq {
        return Err(ModelError::SequenceTooLong { needed, max_seq }.into());
    }
    let (node_mask, node_pos) = build_tree_mask(tree, n + 1);
    let root_row = AttnMask::from_fn(1, n + 1 + tree.len(), |_, c| c <= n);
    let mask = root_row.vstack(&node_mask).expect("equal widths");
    let mut tokens = vec![root];
    tokens.extend(tree.tokens());
    let mut positions = vec![n];
    positions.extend(node_pos);
    Ok(params.forward(&tokens, &positions, &mask, cache)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeVerdict {
    pub branch: Vec<TokenId>,
    pub branch_nodes: Vec<usize>,
    /// Token sampled where the walk stopped; always committed.
    pub correction: TokenId,
    pub rollback_len: usize,
}

/// Walks the tree from the root, sampling from the target conditional at each
/// accepted node (draws `1, 2, ...` of `stream`) and descending on a match.
/// Compacts `cache` so it holds the prefix, the root and the accepted branch.
/// `prefix_len` is the cache length before [`tree_forward`].
#[allow(clippy::too_many_arguments)]
pub fn verify_tree(
    cache: &mut KvCache,
    tree: &DraftTree,
    step2_logits: &Logits,
    prefix_len: usize,
    config: &SamplingConfig,
    rng: &SessionRng,
    stream: u64,
) -> Result<TreeVerdict, DecodeError> {
    let mut cur: Option<usize> = None;
    let mut branch = Vec::new();
    let mut branch_nodes = Vec::new();
    let correction = loop {
        let row = cur.map_or(0, |i| i + 1);
        let dist = truncate_dist(step2_logits.row(row), config)?;
        let t = dist.sample(rng.uniform(stream, 1 + branch.len() as u64));
        match tree.children(cur).find(|&c| tree.nodes[c].token == t) {
            Some(c) => {
                branch.push(t);
                branch_nodes.push(c);
                cur = Some(c);
            }
            None => break t,
        }
    };
    cache.retain_tail(prefix_len + 1, &branch_nodes)?;
    Ok(TreeVerdict {
        rollback_len: cache.len(),
        branch,
        branch_nodes,
        correction,
    })
}

#[derive(Debug, Clone)]
pub struct NucleusOptions {
    pub k: usize,
    pub profile: BranchProfile,
    pub sampling: SamplingConfig,
    pub max_new: usize,
    pub stop_ids: Vec<TokenId>,
    pub adaptive: AdaptiveTokens,
    pub node_budget: usize,
}

impl NucleusOptions {
    pub fn new(params: &ModelParams, k: usize, sampling: SamplingConfig, max_new: usize) -> Self {
        Self {
            k,
            profile: BranchProfile::default_for(k),
            sampling,
            max_new,
            stop_ids: Vec::new(),
            adaptive: AdaptiveTokens::identical(params.config()),
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

/// Generates with tree drafting. A temperature of 0 is handed to the greedy decoder.
pub fn generate_nucleus(
    params: &ModelParams,
    prompt: &[TokenId],
    opts: &NucleusOptions,
) -> Result<(Vec<TokenId>, GenStats), DecodeError> {
    opts.sampling.validate()?;
    if opts.sampling.is_greedy() {
        let g = GreedyOptions {
            k: opts.k,
            max_new: opts.max_new,
            stop_ids: opts.stop_ids.clone(),
            adaptive: opts.adaptive.clone(),
        };
        return generate_greedy(params, prompt, &g);
    }
    let start = Instant::now();
    if prompt.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let max_seq = params.config().max_seq;
    let needed = prompt.len() + opts.max_new;
    if needed > max_seq {
        return Err(ModelError::SequenceTooLong { needed, max_seq }.into());
    }
    if let Some(max_k) = opts.adaptive.max_k() {
        if opts.k > max_k {
            return Err(DecodeError::TooManyDrafts {
                k: opts.k,
                available: max_k,
            });
        }
    }

    let rng = SessionRng::new(opts.sampling.seed);
    // Draft candidates come from the full distribution so every depth keeps
    // its profile width regardless of temperature or truncation.
    let ranking = SamplingConfig {
        temperature: 1.0,
        top_k: 0,
        top_p: 1.0,
        seed: opts.sampling.seed,
    };
    let mut stats = GenStats::new(opts.k);
    let mut out = Vec::with_capacity(opts.max_new);
    let mut cache = params.new_cache();
    let mut pending = prompt.to_vec();
    let mut loop_idx = 0u64;
    while out.len() < opts.max_new {
        let n = cache.len() + pending.len();
        let k = opts.k.min(max_seq - n - 1);
        let step1 = adaptive_pass(params, &mut cache, &pending, k, &opts.adaptive)?;
        let root = truncate_dist(step1.row(0), &opts.sampling)?.sample(rng.uniform(loop_idx, 0));
        let dists = (1..=k)
            .map(|j| truncate_dist(step1.row(j), &ranking))
            .collect::<Result<Vec<_>, _>>()?;
        let tree = build_tree(&dists, &opts.profile, opts.node_budget)?;
        let step2 = tree_forward(params, &mut cache, root, &tree)?;
        let verdict = verify_tree(&mut cache, &tree, &step2, n, &opts.sampling, &rng, loop_idx)?;

        let mut block = Vec::with_capacity(verdict.branch.len() + 2);
        block.push(root);
        block.extend_from_slice(&verdict.branch);
        block.push(verdict.correction);
        pending = vec![verdict.correction];
        let stopped = clip_block(&mut block, opts.max_new - out.len(), &opts.stop_ids);
        stats.record_loop(block.len(), verdict.branch.len(), k);
        out.extend_from_slice(&block);
        loop_idx += 1;
        if stopped {
            break;
        }
    }
    stats.wall_time = start.elapsed();
    Ok((out, stats))
}
