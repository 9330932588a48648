use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::MechanismError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    InitialFrame,
    Instruction,
    VideoChunk,
    WorldQuery,
    EgoQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// 1-based turn for instructions and chunks, 0 otherwise.
    pub turn: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(kind: SegmentKind, turn: usize, len: usize) -> Self {
        Self { kind, turn, len }
    }
}

/// Planner input sequence:
/// `InitialFrame, (Instruction t, VideoChunk t) for completed turns,
/// Instruction k, then the world and ego query blocks`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    segments: Vec<Segment>,
}

impl SequenceLayout {
    pub fn new(segments: Vec<Segment>) -> Result<Self, MechanismError> {
        let layout = Self { segments };
        layout.check()?;
        Ok(layout)
    }

    /// Layout with `completed` finished turns followed by the current
    /// instruction, world queries first.
    pub fn standard(
        completed: usize,
        frame_len: usize,
        instr_len: usize,
        chunk_len: usize,
        world: usize,
        ego: usize,
    ) -> Result<Self, MechanismError> {
        use SegmentKind::*;
        let mut s = vec![Segment::new(InitialFrame, 0, frame_len)];
        for t in 1..=completed {
            s.push(Segment::new(Instruction, t, instr_len));
            s.push(Segment::new(VideoChunk, t, chunk_len));
        }
        s.push(Segment::new(Instruction, completed + 1, instr_len));
        s.push(Segment::new(WorldQuery, 0, world));
        s.push(Segment::new(EgoQuery, 0, ego));
        Self::new(s)
    }

    fn check(&self) -> Result<(), MechanismError> {
        use SegmentKind::*;
        let bad = |m: String| Err(MechanismError::MalformedLayout(m));
        let s = &self.segments;
        if s.len() < 4 {
            return bad(format!("{} segments, need at least 4", s.len()));
        }
        if let Some(i) = s.iter().position(|g| g.len == 0) {
            return bad(format!("segment {i} is empty"));
        }
        if s[0].kind != InitialFrame {
            return bad("first segment must be the initial frame".into());
        }
        let tail = [s[s.len() - 2].kind, s[s.len() - 1].kind];
        if tail != [WorldQuery, EgoQuery] && tail != [EgoQuery, WorldQuery] {
            return bad("last two segments must be the world and ego queries".into());
        }
        let history = &s[1..s.len() - 2];
        if history.len().is_multiple_of(2) {
            return bad("history must end with the current instruction".into());
        }
        for (i, g) in history.iter().enumerate() {
            let want = if i % 2 == 0 { Instruction } else { VideoChunk };
            if g.kind != want || g.turn != i / 2 + 1 {
                return bad(format!("segment {} should be {want:?} of turn {}", i + 1, i / 2 + 1));
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Turn of the current instruction.
    pub fn current_turn(&self) -> usize {
        (self.segments.len() - 3).div_ceil(2)
    }

    pub fn completed_turns(&self) -> usize {
        self.current_turn() - 1
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    /// Token range of every segment.
    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut at = 0;
        self.segments
            .iter()
            .map(|s| {
                at += s.len;
                at - s.len..at
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBudget {
    pub world: usize,
    pub ego: usize,
}

impl QueryBudget {
    pub fn total(&self) -> usize {
        self.world + self.ego
    }
}

pub fn allocate_queries(total: usize, world: usize) -> Result<QueryBudget, MechanismError> {
    if world == 0 || world >= total {
        return Err(MechanismError::BudgetOutOfRange { total, world });
    }
    Ok(QueryBudget { world, ego: total - world })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcaOptions {
    /// Ego queries see the initial frame once the K-turn window reaches
    /// back past the first turn.
    pub ego_sees_initial_when_short: bool,
}

impl Default for RcaOptions {
    fn default() -> Self {
        Self { ego_sees_initial_when_short: true }
    }
}

/// Row-major boolean matrix; `allowed[r][c]` means query position `r` may
/// attend to key position `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    pub size: usize,
    pub allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.size + col]
    }
}

pub fn build_rca_mask(layout: &SequenceLayout, k: usize) -> Result<AttentionMask, MechanismError> {
    build_rca_mask_with(layout, k, &RcaOptions::default())
}

pub fn build_rca_mask_with(
    layout: &SequenceLayout,
    k: usize,
    opts: &RcaOptions,
) -> Result<AttentionMask, MechanismError> {
    use SegmentKind::*;
    if k == 0 {
        return Err(MechanismError::BadWindow);
    }
    layout.check()?;
    let current = layout.current_turn();
    let oldest = current.saturating_sub(k).max(1);
    let ego_initial = opts.ego_sees_initial_when_short && k > layout.completed_turns();

    let world_sees = |s: &Segment| match s.kind {
        InitialFrame | VideoChunk | WorldQuery => true,
        Instruction => s.turn < current,
        EgoQuery => false,
    };
    let ego_sees = |s: &Segment| match s.kind {
        EgoQuery => true,
        InitialFrame => ego_initial,
        Instruction | VideoChunk => s.turn >= oldest,
        WorldQuery => false,
    };
    let is_query = |s: &Segment| matches!(s.kind, WorldQuery | EgoQuery);

    let n = layout.total_len();
    let ranges = layout.ranges();
    let mut allowed = vec![false; n * n];
    for (rs, rr) in layout.segments().iter().zip(&ranges) {
        for (cs, cr) in layout.segments().iter().zip(&ranges) {
            let seg_rule = match rs.kind {
                WorldQuery => Some(world_sees(cs)),
                EgoQuery => Some(ego_sees(cs)),
                _ if is_query(cs) => Some(false),
                _ => None,
            };
            for r in rr.clone() {
                let row = &mut allowed[r * n..(r + 1) * n];
                for c in cr.clone() {
                    row[c] = seg_rule.unwrap_or(c <= r);
                }
            }
        }
    }
    Ok(AttentionMask { size: n, allowed })
}
