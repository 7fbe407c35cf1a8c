//! C interface to the rewardgrid game and the online planning agent.
//!
//! Games are opaque `RgGame` handles created by `rg_game_new_*` and released
//! with `rg_game_free`. Every fallible call returns an `RgStatus`; on failure
//! a description is kept per thread and can be copied out with
//! `rg_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rewardgrid::config::ExperimentSpec;
use rewardgrid::grid_env::encode_observation;
use rewardgrid::online_opt::{online_loop, OnlineParams};
use rewardgrid::seeding::{stream, StreamRng};
use rewardgrid::{Action, Error, GameConfig, GameState, Movement, Status};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    InvalidConfig = 4,
    GameOver = 5,
    Infeasible = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgGameStatus {
    Running = 0,
    Won = 1,
    Captured = 2,
    StepLimit = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgMovement {
    Clockwise = 0,
    Counterclockwise = 1,
    Random = 2,
}

/// Summary of one online-planning game.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgEpisode {
    pub status: RgGameStatus,
    pub score: i64,
    pub steps: u64,
    /// Non-zero when a re-plan found no feasible route.
    pub infeasible: u8,
    pub solves: u64,
}

/// Opaque game handle.
pub struct RgGame {
    config: GameConfig,
    online: OnlineParams,
    state: GameState,
    seed: u64,
    rng: StreamRng,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(code: RgStatus, msg: impl Into<String>) -> RgStatus {
    set_error(msg);
    code
}

fn code_of(e: &Error) -> RgStatus {
    match e {
        Error::Parse { .. } | Error::Io { .. } => RgStatus::Parse,
        Error::InvalidConfig(_) | Error::Unreachable => RgStatus::InvalidConfig,
        Error::InvalidAction { .. } | Error::InvalidParams(_) | Error::Shape { .. } => RgStatus::InvalidArgument,
        Error::GameOver => RgStatus::GameOver,
        Error::Infeasible { .. } => RgStatus::Infeasible,
        Error::Model(_) => RgStatus::Internal,
    }
}

fn from_error(e: Error) -> RgStatus {
    fail(code_of(&e), e.to_string())
}

/// Runs `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> RgStatus) -> RgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => fail(RgStatus::Internal, "panic inside rewardgrid"),
    }
}

fn game_status(s: Status) -> RgGameStatus {
    match s {
        Status::Running => RgGameStatus::Running,
        Status::Won => RgGameStatus::Won,
        Status::Captured => RgGameStatus::Captured,
        Status::EpochLimit => RgGameStatus::StepLimit,
    }
}

fn movement(m: RgMovement) -> Movement {
    match m {
        RgMovement::Clockwise => Movement::Clockwise,
        RgMovement::Counterclockwise => Movement::Counterclockwise,
        RgMovement::Random => Movement::Random,
    }
}

fn create(config: GameConfig, online: OnlineParams, seed: u64, out: *mut *mut RgGame) -> RgStatus {
    if out.is_null() {
        return fail(RgStatus::NullPointer, "out is null");
    }
    let state = match config.new_game() {
        Ok(s) => s,
        Err(e) => return from_error(e),
    };
    let game = RgGame {
        config,
        online,
        state,
        seed,
        rng: stream(seed, 1),
    };
    unsafe { *out = Box::into_raw(Box::new(game)) };
    RgStatus::Ok
}

unsafe fn game_mut<'a>(game: *mut RgGame) -> Result<&'a mut RgGame, RgStatus> {
    game.as_mut().ok_or_else(|| fail(RgStatus::NullPointer, "game handle is null"))
}

unsafe fn game_ref<'a>(game: *const RgGame) -> Result<&'a RgGame, RgStatus> {
    game.as_ref().ok_or_else(|| fail(RgStatus::NullPointer, "game handle is null"))
}

/// Creates one of the built-in boards. `size` is 5 or 9.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rg_game_new_preset(size: u32, movement_kind: RgMovement, seed: u64, out: *mut *mut RgGame) -> RgStatus {
    guard(|| {
        let mv = movement(movement_kind);
        let config = match size {
            5 => GameConfig::five_by_five(mv),
            9 => GameConfig::nine_by_nine(mv),
            _ => return fail(RgStatus::InvalidArgument, format!("no preset of size {size}")),
        };
        create(config, OnlineParams::default(), seed, out)
    })
}

/// Creates a game from the text of an experiment spec (TOML). The `[game]`
/// table gives the board and the optional `[online]` table the planner
/// settings used by `rg_online_episode`.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_game_new_from_toml(toml: *const c_char, seed: u64, out: *mut *mut RgGame) -> RgStatus {
    guard(|| {
        if toml.is_null() {
            return fail(RgStatus::NullPointer, "toml is null");
        }
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(RgStatus::Parse, "spec text is not UTF-8");
        };
        match ExperimentSpec::parse(text, "<ffi>") {
            Ok(spec) => create(spec.game, spec.online, seed, out),
            Err(e) => from_error(e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `game` must come from `rg_game_new_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rg_game_free(game: *mut RgGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// Starts a new game and rewinds the adversary stream to the creation seed.
///
/// # Safety
/// `game` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rg_game_reset(game: *mut RgGame) -> RgStatus {
    guard(|| {
        let g = match game_mut(game) {
            Ok(g) => g,
            Err(c) => return c,
        };
        match g.config.new_game() {
            Ok(s) => {
                g.state = s;
                g.rng = stream(g.seed, 1);
                RgStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Plays one turn: the agent takes `action` (0 up, 1 down, 2 left, 3 right;
/// off-grid moves stay put), then the adversaries move. Either out pointer
/// may be null.
///
/// # Safety
/// `game` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_game_step(
    game: *mut RgGame,
    action: u32,
    out_reward: *mut i64,
    out_status: *mut RgGameStatus,
) -> RgStatus {
    guard(|| {
        let g = match game_mut(game) {
            Ok(g) => g,
            Err(c) => return c,
        };
        let Some(action) = Action::from_index(action as usize) else {
            return fail(RgStatus::InvalidArgument, format!("action {action} is not in 0..4"));
        };
        match g.config.play_turn(&g.state, action, &mut g.rng) {
            Ok(out) => {
                g.state = out.state;
                if !out_reward.is_null() {
                    *out_reward = out.reward;
                }
                if !out_status.is_null() {
                    *out_status = game_status(g.state.status);
                }
                RgStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of cells, which is also the observation length.
///
/// # Safety
/// `game` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rg_game_cells(game: *const RgGame) -> usize {
    game.as_ref().map_or(0, |g| g.config.n_cells())
}

/// Copies the row-major board encoding into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_game_observation(game: *const RgGame, buf: *mut f64, len: usize) -> RgStatus {
    guard(|| {
        let g = match game_ref(game) {
            Ok(g) => g,
            Err(c) => return c,
        };
        if buf.is_null() {
            return fail(RgStatus::NullPointer, "buf is null");
        }
        let obs = encode_observation(&g.config, &g.state);
        if len < obs.len() {
            return fail(RgStatus::BufferTooSmall, format!("need {} values, got {len}", obs.len()));
        }
        ptr::copy_nonoverlapping(obs.as_ptr(), buf, obs.len());
        RgStatus::Ok
    })
}

/// Current agent cell, score, step count and status. Null out pointers are skipped.
///
/// # Safety
/// `game` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_game_state(
    game: *const RgGame,
    row: *mut u32,
    col: *mut u32,
    score: *mut i64,
    steps: *mut u64,
    status: *mut RgGameStatus,
) -> RgStatus {
    guard(|| {
        let g = match game_ref(game) {
            Ok(g) => g,
            Err(c) => return c,
        };
        let s = &g.state;
        if !row.is_null() {
            *row = s.agent.row as u32;
        }
        if !col.is_null() {
            *col = s.agent.col as u32;
        }
        if !score.is_null() {
            *score = s.score;
        }
        if !steps.is_null() {
            *steps = s.steps as u64;
        }
        if !status.is_null() {
            *status = game_status(s.status);
        }
        RgStatus::Ok
    })
}

/// Best score reachable when no adversary interferes.
///
/// # Safety
/// `game` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_game_optimal_score(game: *const RgGame, out: *mut i64) -> RgStatus {
    guard(|| {
        let g = match game_ref(game) {
            Ok(g) => g,
            Err(c) => return c,
        };
        if out.is_null() {
            return fail(RgStatus::NullPointer, "out is null");
        }
        match g.config.optimal_score() {
            Ok(v) => {
                *out = v;
                RgStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Plays a fresh game with the online planner: `n_obs` observed adversary
/// moves, then one re-plan per turn. `phi` of zero or less keeps the handle's
/// setting. The handle's own game is not touched; the adversary stream is
/// the one of `seed`.
///
/// # Safety
/// `game` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_online_episode(game: *const RgGame, n_obs: u32, phi: f64, seed: u64, out: *mut RgEpisode) -> RgStatus {
    guard(|| {
        let g = match game_ref(game) {
            Ok(g) => g,
            Err(c) => return c,
        };
        if out.is_null() {
            return fail(RgStatus::NullPointer, "out is null");
        }
        let mut params = g.online;
        params.n_obs = n_obs as usize;
        if phi > 0.0 {
            params.phi = phi;
        }
        let mut rng = stream(seed, 1);
        match online_loop(&g.config, &params, &mut rng) {
            Ok(ep) => {
                *out = RgEpisode {
                    status: game_status(ep.status),
                    score: ep.score,
                    steps: ep.steps as u64,
                    infeasible: u8::from(ep.infeasible),
                    solves: ep.solves as u64,
                };
                RgStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to fit). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len` 0.
#[no_mangle]
pub unsafe extern "C" fn rg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
