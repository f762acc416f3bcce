//! Single-room text gridworld in the style of BabyAI-Text.
//!
//! An 8×8 tile room (walls on the border), one agent with a heading, a few
//! coloured keys/balls/boxes, and a goal sentence. The agent sees a 7×7
//! cone in front of it, rendered as "You see a ..." clauses.

mod external;
pub mod nav;
mod oracle;

use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Goal;

pub use external::{serve, ExternalEnv};
pub use oracle::{OracleBackend, OracleConfig, OraclePrior};

pub const WIDTH: i32 = 8;
pub const HEIGHT: i32 = 8;
pub const VIEW_FORWARD: i32 = 6;
pub const VIEW_LATERAL: i32 = 3;
pub const INVALID_ACTION: &str = "Invalid action.";
pub const EMPTY_VIEW: &str = "You see nothing ahead.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Grey,
    Purple,
}

impl Color {
    pub const ALL: [Color; 6] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Grey, Color::Purple];

    pub fn as_str(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Grey => "grey",
            Color::Purple => "purple",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Key,
    Ball,
    Box,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Key, Kind::Ball, Kind::Box];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Key => "key",
            Kind::Ball => "ball",
            Kind::Box => "box",
        }
    }
}

/// Colour + kind. Descriptors are unique within a room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Descriptor {
    pub color: Color,
    pub kind: Kind,
}

impl Descriptor {
    pub fn new(color: Color, kind: Kind) -> Self {
        Descriptor { color, kind }
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.as_str(), self.kind.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    pub fn offset(self, (dx, dy): (i32, i32), k: i32) -> Pos {
        Pos { x: self.x + dx * k, y: self.y + dy * k }
    }

    pub fn is_interior(self) -> bool {
        self.x > 0 && self.y > 0 && self.x < WIDTH - 1 && self.y < HEIGHT - 1
    }
}

/// Heading; `y` grows downwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    East,
    South,
    West,
    North,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::East, Dir::South, Dir::West, Dir::North];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Dir::ALL[i % 4]
    }

    pub fn vec(self) -> (i32, i32) {
        match self {
            Dir::East => (1, 0),
            Dir::South => (0, 1),
            Dir::West => (-1, 0),
            Dir::North => (0, -1),
        }
    }

    /// Unit vector pointing to the agent's right.
    pub fn right_vec(self) -> (i32, i32) {
        let (dx, dy) = self.vec();
        (-dy, dx)
    }

    pub fn left(self) -> Dir {
        Dir::from_index(self.index() + 3)
    }

    pub fn right(self) -> Dir {
        Dir::from_index(self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub desc: Descriptor,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    GoTo,
    PickUp,
    GoToAfterPickUp,
    PickUpThenGoTo,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::GoTo, TaskKind::PickUp, TaskKind::GoToAfterPickUp, TaskKind::PickUpThenGoTo];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::GoTo => "go_to",
            TaskKind::PickUp => "pick_up",
            TaskKind::GoToAfterPickUp => "go_to_after_pick_up",
            TaskKind::PickUpThenGoTo => "pick_up_then_go_to",
        }
    }

    fn num_targets(self) -> usize {
        match self {
            TaskKind::GoTo | TaskKind::PickUp => 1,
            _ => 2,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        TaskKind::ALL.into_iter().find(|k| k.as_str() == key).ok_or_else(|| Error::Config(format!("unknown task kind {s:?}")))
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Task kind plus target descriptors. Sequenced kinds hold `[pick, reach]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub targets: Vec<Descriptor>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, targets: Vec<Descriptor>) -> Result<Self> {
        if targets.len() != kind.num_targets() || (targets.len() == 2 && targets[0] == targets[1]) {
            return Err(Error::Validation(format!("task {kind} needs {} distinct targets", kind.num_targets())));
        }
        Ok(TaskSpec { kind, targets })
    }

    pub fn goal_text(&self) -> String {
        let t = &self.targets;
        match self.kind {
            TaskKind::GoTo => format!("go to the {}", t[0]),
            TaskKind::PickUp => format!("pick up the {}", t[0]),
            TaskKind::GoToAfterPickUp => format!("go to the {} after you pick up the {}", t[1], t[0]),
            TaskKind::PickUpThenGoTo => format!("pick up the {}, then go to the {}", t[0], t[1]),
        }
    }

    pub fn goal(&self) -> Goal {
        Goal::new(self.goal_text()).expect("goal text is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Primitive {
    TurnLeft,
    TurnRight,
    Forward,
    PickUp,
    Drop,
    Toggle,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::TurnLeft,
        Primitive::TurnRight,
        Primitive::Forward,
        Primitive::PickUp,
        Primitive::Drop,
        Primitive::Toggle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Primitive::TurnLeft => "turn left",
            Primitive::TurnRight => "turn right",
            Primitive::Forward => "go forward",
            Primitive::PickUp => "pick up",
            Primitive::Drop => "drop",
            Primitive::Toggle => "toggle",
        }
    }

    /// Exact match against the six lowercase action strings.
    pub fn parse(s: &str) -> Option<Primitive> {
        Primitive::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub width: i32,
    pub height: i32,
    pub agent_pos: Pos,
    pub agent_dir: Dir,
    pub objects: Vec<Object>,
    pub carried: Option<Descriptor>,
    pub task: TaskSpec,
    pub rng_seed: u64,
    /// Number of completed stages of a sequenced task; latches.
    #[serde(default)]
    pub progress: u8,
    #[serde(default)]
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvStepOutcome {
    pub observation_text: String,
    pub reward: f64,
    pub done: bool,
}

impl GridState {
    /// Builds and validates a hand-made state.
    pub fn new(agent_pos: Pos, agent_dir: Dir, objects: Vec<Object>, task: TaskSpec) -> Result<Self> {
        let st = GridState { width: WIDTH, height: HEIGHT, agent_pos, agent_dir, objects, carried: None, task, rng_seed: 0, progress: 0, done: false };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.agent_pos.is_interior() {
            return Err(Error::Validation(format!("agent at {:?} is outside the room", self.agent_pos)));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.pos.is_interior() || o.pos == self.agent_pos {
                return Err(Error::Validation(format!("object {} at {:?} is misplaced", o.desc, o.pos)));
            }
            if self.objects[..i].iter().any(|p| p.pos == o.pos || p.desc == o.desc) {
                return Err(Error::Validation(format!("object {} overlaps or duplicates another", o.desc)));
            }
        }
        let present = |d: &Descriptor| self.carried == Some(*d) || self.objects.iter().any(|o| o.desc == *d);
        if !self.task.targets.iter().all(present) {
            return Err(Error::Validation("task target missing from the room".into()));
        }
        Ok(())
    }

    pub fn goal(&self) -> Goal {
        self.task.goal()
    }

    pub fn front(&self) -> Pos {
        self.agent_pos.offset(self.agent_dir.vec(), 1)
    }

    pub fn object_at(&self, p: Pos) -> Option<&Object> {
        self.objects.iter().find(|o| o.pos == p)
    }

    pub fn position_of(&self, d: Descriptor) -> Option<Pos> {
        self.objects.iter().find(|o| o.desc == d).map(|o| o.pos)
    }

    fn facing(&self, d: Descriptor) -> bool {
        self.object_at(self.front()).is_some_and(|o| o.desc == d)
    }

    /// Whether the task predicate currently holds (updating the stage latch).
    fn check_task(&mut self) -> bool {
        let t = self.task.targets.clone();
        match self.task.kind {
            TaskKind::GoTo => self.facing(t[0]),
            TaskKind::PickUp => self.carried == Some(t[0]),
            TaskKind::GoToAfterPickUp | TaskKind::PickUpThenGoTo => {
                if self.progress == 0 && self.carried == Some(t[0]) {
                    self.progress = 1;
                }
                self.progress >= 1 && self.facing(t[1])
            }
        }
    }

    /// Applies one action. Unparseable text is a no-op that still costs a
    /// step and yields [`INVALID_ACTION`].
    pub fn step(&mut self, action: &str) -> EnvStepOutcome {
        let Some(prim) = Primitive::parse(action.trim()) else {
            return EnvStepOutcome { observation_text: INVALID_ACTION.into(), reward: 0.0, done: self.done };
        };
        self.apply(prim);
        let success = !self.done && self.check_task();
        if success {
            self.done = true;
        }
        EnvStepOutcome { observation_text: self.render(), reward: if success { 1.0 } else { 0.0 }, done: self.done }
    }

    /// Applies a primitive's dynamics without evaluating the task.
    pub(crate) fn apply(&mut self, prim: Primitive) {
        let ahead = self.front();
        let free = ahead.is_interior() && self.object_at(ahead).is_none();
        match prim {
            Primitive::TurnLeft => self.agent_dir = self.agent_dir.left(),
            Primitive::TurnRight => self.agent_dir = self.agent_dir.right(),
            Primitive::Forward if free => self.agent_pos = ahead,
            Primitive::PickUp if self.carried.is_none() => {
                if let Some(i) = self.objects.iter().position(|o| o.pos == ahead) {
                    self.carried = Some(self.objects.remove(i).desc);
                }
            }
            Primitive::Drop if free => {
                if let Some(desc) = self.carried.take() {
                    self.objects.push(Object { desc, pos: ahead });
                }
            }
            _ => {}
        }
    }

    /// Egocentric (lateral, forward) coordinates of `p`; lateral < 0 is left.
    pub fn relative(&self, p: Pos) -> (i32, i32) {
        let (dx, dy) = (p.x - self.agent_pos.x, p.y - self.agent_pos.y);
        let (fx, fy) = self.agent_dir.vec();
        let (rx, ry) = self.agent_dir.right_vec();
        (dx * rx + dy * ry, dx * fx + dy * fy)
    }

    fn wall_distance(&self, v: (i32, i32)) -> i32 {
        let mut k = 1;
        while self.agent_pos.offset(v, k).is_interior() {
            k += 1;
        }
        k
    }

    /// Text view of the 7×7 cone ahead: walls (left, right, forward) then
    /// objects from the leftmost column, far to near within a column.
    pub fn render(&self) -> String {
        let mut clauses = Vec::new();
        let (rx, ry) = self.agent_dir.right_vec();
        for (v, side, limit) in [((-rx, -ry), "left", VIEW_LATERAL), ((rx, ry), "right", VIEW_LATERAL), (self.agent_dir.vec(), "forward", VIEW_FORWARD)] {
            let k = self.wall_distance(v);
            if k <= limit {
                clauses.push(format!("You see a wall {} {side}", steps(k)));
            }
        }
        let mut seen: Vec<(i32, i32, Descriptor)> = self
            .objects
            .iter()
            .filter_map(|o| {
                let (lat, fwd) = self.relative(o.pos);
                (lat.abs() <= VIEW_LATERAL && (0..=VIEW_FORWARD).contains(&fwd)).then_some((lat, fwd, o.desc))
            })
            .collect();
        seen.sort_by_key(|&(lat, fwd, _)| (lat, -fwd));
        for (lat, fwd, desc) in seen {
            let mut parts = Vec::new();
            if lat != 0 {
                parts.push(format!("{} {}", steps(lat.abs()), if lat < 0 { "left" } else { "right" }));
            }
            if fwd != 0 {
                parts.push(format!("{} forward", steps(fwd)));
            }
            clauses.push(format!("You see a {desc} {}", parts.join(" and ")));
        }
        if let Some(c) = self.carried {
            clauses.push(format!("You carry a {c}"));
        }
        if clauses.is_empty() {
            EMPTY_VIEW.to_string()
        } else {
            clauses.join(", ")
        }
    }
}

fn steps(n: i32) -> String {
    if n == 1 {
        "1 step".into()
    } else {
        format!("{n} steps")
    }
}

fn task_salt(kind: TaskKind) -> u64 {
    match kind {
        TaskKind::GoTo => 0x60_70,
        TaskKind::PickUp => 0x91_c4,
        TaskKind::GoToAfterPickUp => 0xa7_f1,
        TaskKind::PickUpThenGoTo => 0x3b_2d,
    }
}

/// Seeded episode start: targets plus 2–5 distractors with unique
/// descriptors, resampled until the task is solvable and not already met.
pub fn reset(seed: u64, kind: TaskKind) -> (Goal, String, GridState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ task_salt(kind).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    loop {
        let st = sample_state(&mut rng, seed, kind);
        let d = nav::plan_distance(&st);
        if d > 0 && d < nav::UNREACHABLE {
            return (st.goal(), st.render(), st);
        }
    }
}

fn sample_state(rng: &mut ChaCha8Rng, seed: u64, kind: TaskKind) -> GridState {
    let mut descs: Vec<Descriptor> = Color::ALL.iter().flat_map(|&c| Kind::ALL.iter().map(move |&k| Descriptor::new(c, k))).collect();
    let n = kind.num_targets() + rng.random_range(2..=5);
    let mut cells: Vec<Pos> = (1..WIDTH - 1).flat_map(|x| (1..HEIGHT - 1).map(move |y| Pos::new(x, y))).collect();
    let mut objects = Vec::with_capacity(n);
    for _ in 0..n {
        let di = rng.random_range(0..descs.len());
        let ci = rng.random_range(0..cells.len());
        objects.push(Object { desc: descs.swap_remove(di), pos: cells.swap_remove(ci) });
    }
    let agent_pos = *cells.choose(rng).expect("room has free cells");
    let agent_dir = Dir::from_index(rng.random_range(0..4));
    let targets = objects[..kind.num_targets()].iter().map(|o| o.desc).collect();
    GridState {
        width: WIDTH,
        height: HEIGHT,
        agent_pos,
        agent_dir,
        objects,
        carried: None,
        task: TaskSpec { kind, targets },
        rng_seed: seed,
        progress: 0,
        done: false,
    }
}

/// Result of an environment reset.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvReset {
    pub goal: Goal,
    pub observation: String,
}

/// A text environment driven by the harness, one episode at a time.
pub trait Environment: Send {
    fn reset(&mut self, seed: u64, task: &str) -> Result<EnvReset>;
    fn step(&mut self, action: &str) -> Result<EnvStepOutcome>;
    /// Ground-truth state, when the environment exposes one (for oracles).
    fn grid_state(&self) -> Option<&GridState> {
        None
    }
}

/// In-process gridworld environment.
#[derive(Debug, Default)]
pub struct GridWorld {
    state: Option<GridState>,
}

impl GridWorld {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_state(state: GridState) -> Self {
        GridWorld { state: Some(state) }
    }
}

impl Environment for GridWorld {
    fn reset(&mut self, seed: u64, task: &str) -> Result<EnvReset> {
        let kind: TaskKind = task.parse()?;
        let (goal, observation, st) = reset(seed, kind);
        self.state = Some(st);
        Ok(EnvReset { goal, observation })
    }

    fn step(&mut self, action: &str) -> Result<EnvStepOutcome> {
        let st = self.state.as_mut().ok_or_else(|| Error::EnvProtocol("step before reset".into()))?;
        if st.done {
            return Err(Error::EnvProtocol("step after the episode ended".into()));
        }
        Ok(st.step(action))
    }

    fn grid_state(&self) -> Option<&GridState> {
        self.state.as_ref()
    }
}
