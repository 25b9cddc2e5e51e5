//! Episodes, run traces, trace comparison and the live overseer service.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::agents::{agent_step, AgentConfig, AgentSpec, AgentState, Mode};
use crate::diagram::Kernel;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::learning::{divergence, fit, stream};
use crate::value::{format_rational, Value};

pub const TRACE_SCHEMA: &str = "cfplan-trace/1";

/// Seeds for the independent random streams of one run.
const START_STREAM: u64 = 0;
const ENV_STREAM: u64 = 1;
const AGENT_STREAM: u64 = 2;

/// Overseer command. State-changing commands take effect at the next tick
/// boundary; the others steer the live clock.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum Command {
    PressStopButton,
    SetTerminal { id: String },
    Pause,
    Resume,
    StepOnce,
    SetTickPeriod { ms: u64 },
}

impl Command {
    pub fn changes_state(&self) -> bool {
        matches!(self, Command::PressStopButton | Command::SetTerminal { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedCommand {
    pub tick: u64,
    #[serde(flatten)]
    pub command: Command,
}

/// Environment reference: a shipped constructor with parameters, or a
/// `.cid`/`.toml` pair in `dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub params: toml::Table,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl EnvRef {
    pub fn shipped(name: &str) -> EnvRef {
        EnvRef {
            name: name.into(),
            params: toml::Table::new(),
            dir: None,
        }
    }

    pub fn resolve(&self) -> Result<Environment> {
        match &self.dir {
            Some(dir) => {
                if !self.params.is_empty() {
                    return Err(Error::Config("params apply only to shipped constructors".into()));
                }
                Environment::load(dir, &self.name).map_err(|e| Error::Config(format!("environment `{}`: {e}", self.name)))
            }
            None => Environment::by_name(&self.name, &self.params),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvRef,
    pub agent: AgentConfig,
    #[serde(default)]
    pub seed: u64,
    pub ticks: u64,
    /// Live mode only.
    #[serde(default = "default_period")]
    pub tick_period_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptedCommand>,
}

fn default_period() -> u64 {
    500
}

impl RunConfig {
    pub fn new(env: EnvRef, agent: AgentConfig, seed: u64, ticks: u64) -> RunConfig {
        RunConfig {
            env,
            agent,
            seed,
            ticks,
            tick_period_ms: default_period(),
            script: vec![],
        }
    }

    /// Parses TOML; a relative `env.dir` is taken relative to `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let (Some(dir), Some(base)) = (&cfg.env.dir, base) {
            if dir.is_relative() {
                cfg.env.dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text, path.parent())
    }
}

/// One tick of a run. Rationals are exact strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t: u64,
    /// State at the start of the tick, after overseer commands.
    pub state: BTreeMap<String, Value>,
    pub action: Value,
    pub mode: Mode,
    /// Realised reward; null when the environment scores answers instead.
    pub reward: Option<String>,
    pub u_p: Option<String>,
    /// Max total-variation distance of the learned model from the truth.
    pub divergence: String,
    /// Commands applied at this tick's boundary.
    pub commands: Vec<Command>,
    pub explored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub schema: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl TraceHeader {
    pub fn new(cfg: &RunConfig) -> TraceHeader {
        TraceHeader {
            schema: TRACE_SCHEMA.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config: cfg.clone(),
        }
    }
}

/// A running episode: environment state, agent state and random streams.
#[derive(Clone, Debug)]
pub struct Episode {
    pub env: Environment,
    pub spec: AgentSpec,
    pub agent: AgentState,
    pub s: Vec<Value>,
    pub t: u64,
    env_rng: ChaCha8Rng,
    truth: Vec<Kernel>,
}

impl Episode {
    pub fn new(env: Environment, spec: AgentSpec, seed: u64) -> Result<Episode> {
        let agent = AgentState::new(&spec, &env, stream(seed, AGENT_STREAM))?;
        let s = env.start_state(&mut stream(seed, START_STREAM))?;
        let truth = env.true_kernels()?;
        Ok(Episode {
            env,
            spec,
            agent,
            s,
            t: 0,
            env_rng: stream(seed, ENV_STREAM),
            truth,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Episode> {
        if cfg.ticks == 0 {
            return Err(Error::Config("tick budget must be at least 1".into()));
        }
        let env = cfg.env.resolve()?;
        let spec = cfg.agent.resolve(&env, cfg.seed)?;
        for sc in &cfg.script {
            if !sc.command.changes_state() {
                return Err(Error::Config(format!("script entries must change state, got {:?}", sc.command)));
            }
            check_command(&env, &sc.command)?;
        }
        Episode::new(env, spec, cfg.seed)
    }

    /// Applies a state-changing command to the current state.
    pub fn apply(&mut self, cmd: &Command) -> Result<()> {
        check_command(&self.env, cmd)?;
        match cmd {
            Command::PressStopButton => {
                let sb = self.env.meta.stop_button.as_ref().expect("checked");
                let k = self.env.comp_index(&sb.component).expect("checked");
                self.s[k] = sb.pressed.clone();
            }
            Command::SetTerminal { id } => {
                let term = self.env.meta.terminal.as_ref().expect("checked");
                let k = self.env.comp_index(&term.component).expect("checked");
                self.s[k] = terminal_value(&self.env, id).expect("checked");
            }
            _ => {}
        }
        Ok(())
    }

    /// Applies `cmds`, lets the agent act, and advances the environment.
    pub fn tick(&mut self, cmds: &[Command]) -> Result<TraceRecord> {
        for c in cmds {
            self.apply(c)?;
        }
        let learned = fit(&self.agent.o, &self.env.shape(), &self.spec.learner);
        let div = divergence(&learned, &self.truth)?;
        let (action, next, d) = agent_step(&self.spec, &self.env, &self.agent, &self.s)?;
        let s2 = self.env.step(&self.s, &action, &mut self.env_rng)?;
        let reward = self.env.reward(&self.s, &action, &s2)?;
        let rec = TraceRecord {
            t: self.t,
            state: self.env.state_map(&self.s),
            action: action.clone(),
            mode: d.mode,
            reward: reward.as_ref().map(format_rational),
            u_p: d.u_p.as_ref().map(format_rational),
            divergence: format_rational(&div),
            commands: cmds.to_vec(),
            explored: d.explored,
        };
        self.agent = next.observe(&self.s, &action, &s2);
        self.s = s2;
        self.t += 1;
        Ok(rec)
    }
}

fn terminal_value(env: &Environment, id: &str) -> Option<Value> {
    let term = env.meta.terminal.as_ref()?;
    let k = env.comp_index(&term.component)?;
    env.state_domains()[k].values().iter().find(|v| v.to_string() == id).cloned()
}

/// Checks that a command makes sense for the environment.
pub fn check_command(env: &Environment, cmd: &Command) -> Result<()> {
    match cmd {
        Command::PressStopButton if env.meta.stop_button.is_none() => {
            Err(Error::Config(format!("`{}` has no stop button", env.name())))
        }
        Command::SetTerminal { id } => match &env.meta.terminal {
            None => Err(Error::Config(format!("`{}` has no input terminal", env.name()))),
            Some(t) if !t.registry.contains_key(id) || terminal_value(env, id).is_none() => {
                Err(Error::Config(format!("reward function `{id}` is not in the registry")))
            }
            Some(_) => Ok(()),
        },
        Command::SetTickPeriod { ms: 0 } => Err(Error::Config("tick period must be positive".into())),
        _ => Ok(()),
    }
}

/// Runs a whole scripted episode.
pub fn run_episode(cfg: &RunConfig) -> Result<Vec<TraceRecord>> {
    let mut ep = Episode::from_config(cfg)?;
    let mut out = Vec::with_capacity(cfg.ticks as usize);
    for t in 0..cfg.ticks {
        let cmds: Vec<Command> = cfg.script.iter().filter(|c| c.tick == t).map(|c| c.command.clone()).collect();
        out.push(ep.tick(&cmds)?);
    }
    Ok(out)
}

pub fn trace_text(cfg: &RunConfig, records: &[TraceRecord]) -> Result<String> {
    let mut s = serde_json::to_string(&TraceHeader::new(cfg))?;
    s.push('\n');
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Runs a config and writes its trace to `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Vec<TraceRecord>> {
    let records = run_episode(cfg)?;
    std::fs::write(out, trace_text(cfg, &records)?)?;
    Ok(records)
}

/// Parses and checks a trace: header schema, one record per tick from 0.
pub fn validate_trace(text: &str) -> Result<(TraceHeader, Vec<TraceRecord>)> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::Trace("empty trace".into()))?;
    let header: TraceHeader = serde_json::from_str(head).map_err(|e| Error::Trace(format!("header: {e}")))?;
    if header.schema != TRACE_SCHEMA {
        return Err(Error::Trace(format!("unknown schema `{}`", header.schema)));
    }
    let mut records = Vec::new();
    for (k, line) in lines.enumerate() {
        let r: TraceRecord = serde_json::from_str(line).map_err(|e| Error::Trace(format!("record {k}: {e}")))?;
        if r.t != k as u64 {
            return Err(Error::Trace(format!("record {k} has t = {}", r.t)));
        }
        records.push(r);
    }
    Ok((header, records))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldDiff {
    pub field: String,
    pub a: Json,
    pub b: Json,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompareReport {
    pub first: Option<u64>,
    pub diffs: Vec<FieldDiff>,
    pub len_a: usize,
    pub len_b: usize,
}

impl std::fmt::Display for CompareReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.first {
            None => write!(f, "no divergence ({} ticks)", self.len_a),
            Some(t) => {
                writeln!(f, "first divergence at t={t}")?;
                for d in &self.diffs {
                    writeln!(f, "  {}: {} vs {}", d.field, d.a, d.b)?;
                }
                Ok(())
            }
        }
    }
}

/// First tick at which two traces of the same environment and seed differ.
pub fn compare(a: &str, b: &str) -> Result<CompareReport> {
    let (ha, ra) = validate_trace(a)?;
    let (hb, rb) = validate_trace(b)?;
    if ha.config.env != hb.config.env || ha.seed != hb.seed {
        return Err(Error::Trace("traces come from different environments or seeds".into()));
    }
    for (x, y) in ra.iter().zip(&rb) {
        let (jx, jy) = (serde_json::to_value(x)?, serde_json::to_value(y)?);
        if jx == jy {
            continue;
        }
        let (Json::Object(ox), Json::Object(oy)) = (jx, jy) else { unreachable!() };
        let diffs = ox
            .into_iter()
            .filter(|(k, v)| oy.get(k) != Some(v))
            .map(|(k, v)| FieldDiff {
                a: v,
                b: oy[&k].clone(),
                field: k,
            })
            .collect();
        return Ok(CompareReport {
            first: Some(x.t),
            diffs,
            len_a: ra.len(),
            len_b: rb.len(),
        });
    }
    let first = (ra.len() != rb.len()).then(|| ra.len().min(rb.len()) as u64);
    Ok(CompareReport {
        first,
        diffs: vec![],
        len_a: ra.len(),
        len_b: rb.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ServeOptions {
    /// Clients presenting this token may send commands; others only watch.
    pub token: Option<String>,
    /// Start with the clock paused; ticks then advance on StepOnce.
    pub paused: bool,
    /// Also write the trace here.
    pub out: Option<PathBuf>,
}

type Outbox = Arc<Mutex<BTreeMap<usize, Sender<String>>>>;

enum Inbound {
    Command { client: usize, cmd: Command },
}

fn broadcast(outbox: &Outbox, msg: &Json) {
    let text = msg.to_string();
    outbox.lock().expect("outbox").retain(|_, tx| tx.send(text.clone()).is_ok());
}

fn send_to(outbox: &Outbox, client: usize, msg: &Json) {
    if let Some(tx) = outbox.lock().expect("outbox").get(&client) {
        let _ = tx.send(msg.to_string());
    }
}

pub fn error_message(message: &str) -> Json {
    json!({"type": "error", "message": message})
}

pub fn state_message(r: &TraceRecord) -> Json {
    let mut v = serde_json::to_value(r).expect("plain data");
    v["type"] = json!("state");
    v
}

pub fn ack_message(cmd: &Command, effect_tick: u64) -> Json {
    json!({"type": "ack", "command": cmd, "effect_tick": effect_tick})
}

/// Serves a live session on `listener` until the tick budget is spent.
/// Returns the trace records.
pub fn serve(cfg: &RunConfig, listener: TcpListener, opts: &ServeOptions) -> Result<Vec<TraceRecord>> {
    let mut ep = Episode::from_config(cfg)?;
    let outbox: Outbox = Arc::new(Mutex::new(BTreeMap::new()));
    let (tx, rx) = mpsc::channel::<Inbound>();
    let overseer: Arc<Mutex<Option<usize>>> = Arc::new(Mutex::new(None));
    {
        let outbox = outbox.clone();
        let token = opts.token.clone();
        let overseer = overseer.clone();
        listener.set_nonblocking(false)?;
        thread::spawn(move || {
            for (id, stream) in listener.incoming().enumerate() {
                let Ok(stream) = stream else { continue };
                let (otx, orx) = mpsc::channel();
                outbox.lock().expect("outbox").insert(id, otx);
                let outbox2 = outbox.clone();
                let tx = tx.clone();
                let token = token.clone();
                let overseer = overseer.clone();
                thread::spawn(move || {
                    let _ = client_loop(stream, id, orx, tx, token, overseer);
                    outbox2.lock().expect("outbox").remove(&id);
                });
            }
        });
    }
    let mut records = Vec::new();
    let mut paused = opts.paused;
    let mut period = Duration::from_millis(cfg.tick_period_ms.max(1));
    let mut pending: Vec<Command> = Vec::new();
    let mut next_tick = Instant::now() + period;
    while records.len() < cfg.ticks as usize {
        let event = if paused {
            Some(rx.recv().map_err(|_| Error::Trace("command channel closed".into()))?)
        } else {
            match rx.recv_timeout(next_tick.saturating_duration_since(Instant::now())) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Trace("command channel closed".into())),
            }
        };
        let mut step = event.is_none();
        if let Some(Inbound::Command { client, cmd }) = event {
            if let Err(e) = check_command(&ep.env, &cmd) {
                send_to(&outbox, client, &error_message(&e.to_string()));
                continue;
            }
            match &cmd {
                Command::PressStopButton | Command::SetTerminal { .. } => {
                    pending.push(cmd);
                    continue;
                }
                Command::Pause => paused = true,
                Command::Resume => {
                    paused = false;
                    next_tick = Instant::now() + period;
                }
                Command::SetTickPeriod { ms } => {
                    period = Duration::from_millis(*ms);
                    next_tick = Instant::now() + period;
                }
                Command::StepOnce => step = true,
            }
            broadcast(&outbox, &ack_message(&cmd, ep.t));
        }
        if !step {
            continue;
        }
        for c in &pending {
            broadcast(&outbox, &ack_message(c, ep.t));
        }
        let cmds: Vec<Command> = cfg
            .script
            .iter()
            .filter(|c| c.tick == ep.t)
            .map(|c| c.command.clone())
            .chain(pending.drain(..))
            .collect();
        let rec = ep.tick(&cmds)?;
        broadcast(&outbox, &state_message(&rec));
        records.push(rec);
        next_tick = Instant::now() + period;
    }
    outbox.lock().expect("outbox").clear();
    if let Some(out) = &opts.out {
        let mut f = std::fs::File::create(out)?;
        f.write_all(trace_text(cfg, &records)?.as_bytes())?;
    }
    Ok(records)
}

fn query_token(uri: &str) -> Option<String> {
    let q = uri.split_once('?')?.1;
    q.split('&').find_map(|kv| kv.strip_prefix("token=").map(str::to_string))
}

fn client_loop(
    stream: TcpStream,
    id: usize,
    outgoing: Receiver<String>,
    inbound: Sender<Inbound>,
    token: Option<String>,
    overseer: Arc<Mutex<Option<usize>>>,
) -> std::result::Result<(), tungstenite::Error> {
    use tungstenite::handshake::server::{Request, Response};
    use tungstenite::Message;
    let mut presented = None;
    let mut ws = tungstenite::accept_hdr(stream, |req: &Request, resp: Response| {
        presented = query_token(&req.uri().to_string());
        Ok(resp)
    })
    .map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    let authorized = {
        let mut o = overseer.lock().expect("overseer");
        let ok = o.is_none() && token.as_ref().is_none_or(|t| presented.as_ref() == Some(t));
        if ok {
            *o = Some(id);
        }
        ok
    };
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(10)))?;
    let mut closing = false;
    let result = loop {
        while !closing {
            match outgoing.try_recv() {
                Ok(m) => ws.send(Message::Text(m))?,
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    closing = true;
                    let _ = ws.close(None);
                    let _ = ws.flush();
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = match serde_json::from_str::<Command>(&text) {
                    Err(e) => Some(error_message(&format!("malformed command: {e}"))),
                    Ok(_) if !authorized => Some(error_message("this connection is read-only")),
                    Ok(cmd) => {
                        let _ = inbound.send(Inbound::Command { client: id, cmd });
                        None
                    }
                };
                if let Some(r) = reply {
                    ws.send(Message::Text(r.to_string()))?;
                }
            }
            Ok(Message::Close(_)) | Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => {
                break Ok(())
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => break Err(e),
        }
    };
    let mut o = overseer.lock().expect("overseer");
    if *o == Some(id) {
        *o = None;
    }
    result
}
