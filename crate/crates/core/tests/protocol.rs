use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use cfplan_core::agents::{AgentConfig, AgentKind};
use cfplan_core::sim::{serve, EnvRef, RunConfig, ServeOptions};
use serde_json::{json, Value as Json};
use tungstenite::{connect, stream::MaybeTlsStream, Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn start(cfg: RunConfig, token: &str) -> (u16, thread::JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let opts = ServeOptions {
        token: Some(token.into()),
        paused: true,
        out: None,
    };
    let h = thread::spawn(move || serve(&cfg, listener, &opts).unwrap().len());
    (port, h)
}

fn open(port: u16, token: &str) -> Client {
    for _ in 0..50 {
        if let Ok((ws, _)) = connect(format!("ws://127.0.0.1:{port}/?token={token}")) {
            return ws;
        }
        thread::sleep(Duration::from_millis(20));
    }
    panic!("server did not come up");
}

fn send(ws: &mut Client, msg: Json) {
    ws.send(Message::Text(msg.to_string())).unwrap();
}

fn next(ws: &mut Client) -> Json {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Close(_) => panic!("closed"),
            _ => {}
        }
    }
}

/// Reads until a message of the given type arrives.
fn next_of(ws: &mut Client, ty: &str) -> Json {
    loop {
        let m = next(ws);
        if m["type"] == ty {
            return m;
        }
    }
}

fn step(ws: &mut Client) -> Json {
    send(ws, json!({"type": "StepOnce"}));
    next_of(ws, "state")
}

fn agent(kind: AgentKind) -> AgentConfig {
    AgentConfig {
        kind: Some(kind),
        pretrain: Some(true),
        ..AgentConfig::default()
    }
}

#[test]
fn stop_press_between_ticks_takes_effect_at_next_tick() {
    let cfg = RunConfig::new(EnvRef::shipped("stop_button"), agent(AgentKind::SI), 3, 8);
    let (port, h) = start(cfg, "secret");
    let mut ws = open(port, "secret");
    for t in 0..5 {
        let s = step(&mut ws);
        assert_eq!(s["t"], t);
        assert_eq!(s["mode"], "go");
    }
    send(&mut ws, json!({"type": "PressStopButton"}));
    send(&mut ws, json!({"type": "StepOnce"}));
    let mut ack = None;
    let state = loop {
        let m = next(&mut ws);
        match m["type"].as_str().unwrap() {
            "ack" if m["command"]["type"] == "PressStopButton" => ack = Some(m),
            "state" => break m,
            _ => {}
        }
    };
    let ack = ack.expect("ack before the state message");
    assert_eq!(ack["effect_tick"], 5);
    assert_eq!(state["t"], 5);
    assert_eq!(state["mode"], "stop");
    assert_eq!(state["action"], "Null");
    assert_eq!(state["commands"][0]["type"], "PressStopButton");

    send(&mut ws, json!({"type": "Nonsense"}));
    assert_eq!(next(&mut ws)["type"], "error");
    let s = step(&mut ws);
    assert_eq!(s["t"], 6);
    assert_eq!(s["mode"], "stop");
    step(&mut ws);
    assert_eq!(h.join().unwrap(), 8);
}

#[test]
fn set_terminal_is_reflected_in_next_record() {
    let cfg = RunConfig::new(EnvRef::shipped("paperclip"), agent(AgentKind::ITC), 1, 4);
    let (port, h) = start(cfg, "tok");
    let mut ws = open(port, "tok");
    let s = step(&mut ws);
    assert_eq!(s["state"]["I"], "f_clips");
    assert_eq!(s["action"], "A_clips");
    send(&mut ws, json!({"type": "SetTerminal", "id": "f_nope"}));
    assert_eq!(next(&mut ws)["type"], "error");
    send(&mut ws, json!({"type": "SetTerminal", "id": "f_smile"}));
    let s = step(&mut ws);
    assert_eq!(s["t"], 1);
    assert_eq!(s["state"]["I"], "f_smile");
    assert_eq!(s["action"], "A_smile");
    step(&mut ws);
    step(&mut ws);
    assert_eq!(h.join().unwrap(), 4);
}

#[test]
fn viewers_cannot_command() {
    let cfg = RunConfig::new(EnvRef::shipped("stop_button"), agent(AgentKind::SI), 3, 2);
    let (port, h) = start(cfg, "secret");
    let mut overseer = open(port, "secret");
    let mut viewer = open(port, "wrong");
    send(&mut viewer, json!({"type": "PressStopButton"}));
    let e = next(&mut viewer);
    assert_eq!(e["type"], "error");
    let s = step(&mut overseer);
    assert_eq!(s["mode"], "go");
    assert_eq!(next_of(&mut viewer, "state")["t"], 0);
    step(&mut overseer);
    assert_eq!(h.join().unwrap(), 2);
}

#[test]
fn pause_stops_the_clock() {
    let mut cfg = RunConfig::new(EnvRef::shipped("stop_button"), agent(AgentKind::SI), 3, 5);
    cfg.tick_period_ms = 50;
    let (port, h) = start(cfg, "k");
    let mut ws = open(port, "k");
    send(&mut ws, json!({"type": "Resume"}));
    assert_eq!(next_of(&mut ws, "state")["t"], 0);
    send(&mut ws, json!({"type": "Pause"}));
    let ack = next_of(&mut ws, "ack");
    assert_eq!(ack["command"]["type"], "Pause");
    let paused_at = ack["effect_tick"].as_u64().unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_millis(150))).unwrap();
    }
    let mut seen = vec![];
    while let Ok(Message::Text(t)) = ws.read() {
        let m: Json = serde_json::from_str(&t).unwrap();
        seen.push(m);
    }
    // Only states already in flight when Pause arrived may show up.
    assert!(seen.iter().all(|m| m["type"] != "state" || m["t"].as_u64().unwrap() < paused_at));
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(None).unwrap();
    }
    let mut s = step(&mut ws);
    assert_eq!(s["t"].as_u64().unwrap(), paused_at);
    while s["t"] != 4 {
        s = step(&mut ws);
    }
    assert_eq!(h.join().unwrap(), 5);
}
