//! Shipped files under `envs/` must match the constructors. Run with
//! `CFPLAN_BLESS=1` to rewrite them.

use std::path::{Path, PathBuf};

use cfplan_core::agents::{build_planning_world, AgentKind, AgentSpec, AgentState, PlanningWorld};
use cfplan_core::dsl::{serialize, serialize_template};
use cfplan_core::envs::{dice_world, paperclip_terminal_world, shipped, Environment};
use cfplan_core::learning::stream;
use cfplan_core::value::rat;

fn envs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../envs")
}

fn check(name: &str, text: &str) {
    let path = envs_dir().join(name);
    if std::env::var_os("CFPLAN_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, text).unwrap();
    }
    let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(on_disk, text, "{name} is stale");
}

#[test]
fn shipped_env_files_match_constructors() {
    for env in shipped().unwrap() {
        let (cid, meta) = env.to_files().unwrap();
        check(&format!("{}.cid", env.name()), &cid);
        check(&format!("{}.toml", env.name()), &meta);
        let back = Environment::load(&envs_dir(), env.name()).unwrap();
        assert_eq!(back.world, env.world);
        assert_eq!(back.meta, env.meta);
    }
}

#[test]
fn dice_files_match() {
    let (f, c) = dice_world().unwrap();
    check("dice_f.cid", &serialize(&f));
    check("dice_c.cid", &serialize(&c));
}

#[test]
fn terminal_planning_worlds_match() {
    let env = paperclip_terminal_world(10000).unwrap();
    let s = env.start_state(&mut stream(0, 0)).unwrap();
    for (kind, compact, file) in [
        (AgentKind::ITF, false, "worlds/paperclip_fi.cid"),
        (AgentKind::ITC, false, "worlds/paperclip_ci.cid"),
        (AgentKind::ITC, true, "worlds/paperclip_ci_compact.cid"),
    ] {
        let spec = AgentSpec {
            pretrain: true,
            compact,
            ..AgentSpec::new(kind, rat(9, 10))
        };
        let st = AgentState::new(&spec, &env, stream(0, 2)).unwrap();
        let text = match build_planning_world(&spec, &env, &st.o, &s).unwrap() {
            PlanningWorld::Infinite(t) => serialize_template(&t),
            PlanningWorld::Finite(d) => serialize(&d),
        };
        check(file, &text);
    }
}
