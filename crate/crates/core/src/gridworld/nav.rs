//! Plan distance: the fewest primitive actions that finish the task from a
//! state, found by shortest paths over (cell, heading) poses with objects
//! as obstacles.
//!
//! Picking something up removes it from the floor, and carrying the wrong
//! object forces a drop first, so each stage rebuilds the obstacle layout.
//! Distractors on the floor are never moved out of the way; a target that
//! only becomes reachable by clearing one counts as unreachable.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{Descriptor, Dir, GridState, Pos, TaskKind, HEIGHT, WIDTH};

/// Distance reported when the task cannot be finished.
pub const UNREACHABLE: u32 = 100;

const CELLS: usize = (WIDTH * HEIGHT) as usize;
const POSES: usize = CELLS * 4;
const INF: u32 = u32::MAX / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Pick(Descriptor),
    Reach(Descriptor),
}

#[derive(Debug, Clone)]
struct Layout {
    objects: Vec<(Descriptor, Pos)>,
}

impl Layout {
    fn blocked(&self, p: Pos) -> bool {
        !p.is_interior() || self.objects.iter().any(|(_, q)| *q == p)
    }

    fn position(&self, d: Descriptor) -> Option<Pos> {
        self.objects.iter().find(|(e, _)| *e == d).map(|(_, p)| *p)
    }

    fn without(&self, p: Pos) -> Layout {
        Layout { objects: self.objects.iter().copied().filter(|(_, q)| *q != p).collect() }
    }

    fn with(&self, d: Descriptor, p: Pos) -> Layout {
        let mut objects = self.objects.clone();
        objects.push((d, p));
        Layout { objects }
    }
}

fn pose(p: Pos, d: Dir) -> usize {
    ((p.y * WIDTH + p.x) as usize) * 4 + d.index()
}

fn unpose(i: usize) -> (Pos, Dir) {
    let cell = (i / 4) as i32;
    (Pos::new(cell % WIDTH, cell / WIDTH), Dir::from_index(i % 4))
}

fn ahead(i: usize) -> Pos {
    let (p, d) = unpose(i);
    p.offset(d.vec(), 1)
}

/// Multi-source shortest paths over poses; every action costs 1.
fn distances(layout: &Layout, sources: &[(usize, u32)]) -> Vec<u32> {
    let mut dist = vec![INF; POSES];
    let mut heap = BinaryHeap::new();
    for &(s, c) in sources {
        if c < dist[s] {
            dist[s] = c;
            heap.push(Reverse((c, s)));
        }
    }
    while let Some(Reverse((c, s))) = heap.pop() {
        if c > dist[s] {
            continue;
        }
        let (p, d) = unpose(s);
        let mut next = vec![pose(p, d.left()), pose(p, d.right())];
        let f = p.offset(d.vec(), 1);
        if !layout.blocked(f) {
            next.push(pose(f, d));
        }
        for n in next {
            if c + 1 < dist[n] {
                dist[n] = c + 1;
                heap.push(Reverse((c + 1, n)));
            }
        }
    }
    dist
}

fn facing(dist: &[u32], target: Pos) -> impl Iterator<Item = (usize, u32)> + '_ {
    (0..POSES).filter(move |&i| dist[i] < INF && ahead(i) == target).map(move |i| (i, dist[i]))
}

fn solve(layout: &Layout, carried: Option<Descriptor>, sources: &[(usize, u32)], stages: &[Stage]) -> u32 {
    let Some((&stage, rest)) = stages.split_first() else {
        return sources.iter().map(|s| s.1).min().unwrap_or(INF);
    };
    let dist = distances(layout, sources);
    match stage {
        Stage::Reach(t) => match layout.position(t) {
            Some(p) => facing(&dist, p).map(|(_, c)| c).min().unwrap_or(INF),
            // dropping the carried target leaves the agent facing it
            None if carried == Some(t) => (0..POSES).filter(|&i| dist[i] < INF && !layout.blocked(ahead(i))).map(|i| dist[i] + 1).min().unwrap_or(INF),
            None => INF,
        },
        Stage::Pick(t) if carried == Some(t) => solve(layout, carried, sources, rest),
        Stage::Pick(t) => {
            let Some(p) = layout.position(t) else { return INF };
            match carried {
                Some(other) => (0..POSES)
                    .filter(|&i| dist[i] < INF && !layout.blocked(ahead(i)))
                    .map(|i| solve(&layout.with(other, ahead(i)), None, &[(i, dist[i] + 1)], stages))
                    .min()
                    .unwrap_or(INF),
                None => {
                    let picked: Vec<(usize, u32)> = facing(&dist, p).map(|(i, c)| (i, c + 1)).collect();
                    if picked.is_empty() {
                        return INF;
                    }
                    solve(&layout.without(p), Some(t), &picked, rest)
                }
            }
        }
    }
}

/// Fewest actions that complete the remaining task, capped at
/// [`UNREACHABLE`]. Zero once the task is done.
pub fn plan_distance(st: &GridState) -> u32 {
    if st.done {
        return 0;
    }
    let t = &st.task.targets;
    let stages: Vec<Stage> = match st.task.kind {
        TaskKind::GoTo => vec![Stage::Reach(t[0])],
        TaskKind::PickUp => vec![Stage::Pick(t[0])],
        TaskKind::GoToAfterPickUp | TaskKind::PickUpThenGoTo if st.progress == 0 && st.carried != Some(t[0]) => {
            vec![Stage::Pick(t[0]), Stage::Reach(t[1])]
        }
        TaskKind::GoToAfterPickUp | TaskKind::PickUpThenGoTo => vec![Stage::Reach(t[1])],
    };
    let layout = Layout { objects: st.objects.iter().map(|o| (o.desc, o.pos)).collect() };
    let start = [(pose(st.agent_pos, st.agent_dir), 0)];
    solve(&layout, st.carried, &start, &stages).min(UNREACHABLE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{reset, Color, Kind, Object, Primitive, TaskSpec};
    use std::collections::{HashSet, VecDeque};

    fn desc(c: Color, k: Kind) -> Descriptor {
        Descriptor::new(c, k)
    }

    /// Brute-force breadth-first search over full states via the real
    /// dynamics; the reference the solver must match.
    fn brute_force(st: &GridState, limit: u32) -> u32 {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([(st.clone(), 0u32)]);
        seen.insert(st.clone());
        while let Some((s, d)) = queue.pop_front() {
            if d >= limit {
                continue;
            }
            for prim in Primitive::ALL {
                let mut n = s.clone();
                let out = n.step(prim.as_str());
                if out.done {
                    return d + 1;
                }
                if seen.insert(n.clone()) {
                    queue.push_back((n, d + 1));
                }
            }
        }
        UNREACHABLE
    }

    #[test]
    fn facing_adjacent_target_is_one_action_after_stepping() {
        let task = TaskSpec::new(TaskKind::GoTo, vec![desc(Color::Red, Kind::Ball)]).unwrap();
        let st = GridState::new(Pos::new(3, 4), Dir::North, vec![Object { desc: desc(Color::Red, Kind::Ball), pos: Pos::new(3, 2) }], task).unwrap();
        assert_eq!(plan_distance(&st), 1);
    }

    #[test]
    fn boxed_in_target_is_unreachable() {
        let task = TaskSpec::new(TaskKind::PickUp, vec![desc(Color::Red, Kind::Ball)]).unwrap();
        let ring = [(1, 2), (2, 1)];
        let mut objects = vec![Object { desc: desc(Color::Red, Kind::Ball), pos: Pos::new(1, 1) }];
        for (i, (x, y)) in ring.into_iter().enumerate() {
            objects.push(Object { desc: desc(Color::ALL[i + 1], Kind::Box), pos: Pos::new(x, y) });
        }
        let st = GridState::new(Pos::new(5, 5), Dir::North, objects, task).unwrap();
        // distractors count as fixed obstacles, so clearing a box is not planned
        assert_eq!(plan_distance(&st), UNREACHABLE);
    }

    #[test]
    fn matches_brute_force_on_seeded_rooms() {
        for kind in TaskKind::ALL {
            for seed in 0..6 {
                let (_, _, st) = reset(seed, kind);
                let d = plan_distance(&st);
                assert_eq!(d, brute_force(&st, d + 1), "{kind} seed {seed}");
            }
        }
    }

    #[test]
    fn wrong_object_in_hand_matches_brute_force() {
        let task = TaskSpec::new(TaskKind::PickUp, vec![desc(Color::Red, Kind::Ball)]).unwrap();
        let mut st = GridState::new(
            Pos::new(2, 2),
            Dir::East,
            vec![Object { desc: desc(Color::Red, Kind::Ball), pos: Pos::new(5, 5) }, Object { desc: desc(Color::Blue, Kind::Key), pos: Pos::new(3, 2) }],
            task,
        )
        .unwrap();
        st.step("pick up");
        assert_eq!(st.carried, Some(desc(Color::Blue, Kind::Key)));
        let d = plan_distance(&st);
        assert_eq!(d, brute_force(&st, d + 1));
    }
}
