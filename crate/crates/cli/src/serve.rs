//! Teleoperation server: one simulation loop, clients over TCP (one JSON
//! message per line) and WebSocket (one message per text frame).

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::routing::get;
use axum::Router;
use clap::Args;
use endoscope_core::phantom::PhantomMap;
use endoscope_core::teleop::{
    replay_with, scripted_scenario, Ack, AckStatus, AppliedCommand, Caps, ClientMessage, Command, Event, ReplaySummary,
    Role, Scenario, ServerMessage, SimSession, PROTOCOL,
};
use endoscope_core::Error;
use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, watch};

use crate::exit::{Class, CliError};
use crate::Context;

/// Per-client outgoing queue; telemetry and events are dropped when it is full.
const CLIENT_QUEUE: usize = 256;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TCP address for line-delimited clients (default 127.0.0.1:7878; with
    /// `--scenario` no listener is opened unless given).
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    /// WebSocket address, served at `/teleop` (default 127.0.0.1:7879 when live).
    #[arg(long)]
    pub ws_bind: Option<SocketAddr>,
    /// Do not open a WebSocket listener.
    #[arg(long)]
    pub no_ws: bool,
    /// Phantom map JSON; the configured or bundled map when omitted.
    #[arg(long)]
    pub phantom: Option<PathBuf>,
    /// Bundled scenario name or scenario file; replays it and exits.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Scenario telemetry (one line per tick) goes here instead of stdout.
    #[arg(long)]
    pub telemetry_out: Option<PathBuf>,
    /// Event log written here on exit instead of stderr.
    #[arg(long)]
    pub events_out: Option<PathBuf>,
    /// Pace a scenario at the tick rate instead of as fast as possible.
    #[arg(long)]
    pub realtime: bool,
    /// Stop a live server after this many ticks.
    #[arg(long)]
    pub max_ticks: Option<u64>,
}

fn load_scenario(name: &str) -> Result<Scenario, CliError> {
    match scripted_scenario(name) {
        Ok(s) => Ok(s),
        Err(Error::UnknownScenario(_)) if std::path::Path::new(name).is_file() => {
            let text = std::fs::read_to_string(name).map_err(|e| CliError::config(format!("{name}: {e}")))?;
            Ok(Scenario::from_json(&text).map_err(|e| CliError::config(format!("{name}: {e}")))?)
        }
        Err(e) => Err(e.into()),
    }
}

fn load_map(ctx: &Context, a: &ServeArgs) -> Result<PhantomMap, CliError> {
    match &a.phantom {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            PhantomMap::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
        }
        None => Ok(ctx.config.phantom_map()),
    }
}

fn bind_error(addr: SocketAddr, e: std::io::Error) -> CliError {
    let class = if e.kind() == std::io::ErrorKind::AddrInUse { Class::PortBusy } else { Class::Failure };
    CliError::new(class, format!("cannot bind {addr}: {e}"))
}

fn write_events(path: Option<&PathBuf>, events: &[Event]) -> Result<(), CliError> {
    let mut text = String::new();
    for e in events {
        text.push_str(&ServerMessage::Event(e.clone()).to_line());
        text.push('\n');
    }
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::new(Class::Failure, format!("{}: {e}", p.display()))),
        None => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn summary_line(s: &ReplaySummary) -> String {
    let mut v = serde_json::to_value(s).expect("summary serialises");
    v["type"] = json!("summary");
    v.to_string()
}

pub fn serve(ctx: &Context, a: &ServeArgs) -> Result<(), CliError> {
    let map = load_map(ctx, a)?;
    let scenario = a.scenario.as_deref().map(load_scenario).transpose()?;
    // Validate before anything is bound.
    let session = SimSession::new(&ctx.config, map.clone())?;
    match scenario {
        Some(s) if a.bind.is_none() && !a.realtime => headless(ctx, a, map, &s),
        scenario => {
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .map_err(|e| CliError::new(Class::Failure, e.to_string()))?;
            runtime.block_on(live(ctx, a, session, scenario))
        }
    }
}

fn headless(ctx: &Context, a: &ServeArgs, map: PhantomMap, scenario: &Scenario) -> Result<(), CliError> {
    let mut sink: Box<dyn std::io::Write> = match &a.telemetry_out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| CliError::new(Class::Failure, format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    };
    let mut io_error = None;
    let replay = replay_with(&ctx.config, map, scenario, |t| {
        if io_error.is_none() {
            let line = ServerMessage::Telemetry(Box::new(t.clone())).to_line();
            if let Err(e) = writeln!(sink, "{line}") {
                io_error = Some(e);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    sink.flush()?;
    drop(sink);
    finish(ctx, a, &replay.summary, &replay.events)
}

fn finish(ctx: &Context, a: &ServeArgs, summary: &ReplaySummary, events: &[Event]) -> Result<(), CliError> {
    if ctx.verbose > 0 || a.events_out.is_some() {
        write_events(a.events_out.as_ref(), events)?;
    }
    println!("{}", summary_line(summary));
    eprintln!(
        "scenario {}: tumor_reached={} collisions={} max_power={:.4} W",
        summary.scenario, summary.tumor_reached, summary.collision_ticks, summary.max_power_w
    );
    if summary.passed {
        Ok(())
    } else {
        Err(CliError::new(Class::Failure, format!("scenario checks failed: {}", summary.checkpoint_failures.join("; "))))
    }
}

enum Request {
    Cmd { cmd: Command, reply: mpsc::Sender<String> },
    Release { client_id: String, reply: mpsc::Sender<String> },
    Disconnect { client_id: String },
}

#[derive(Clone)]
struct Hub {
    requests: mpsc::UnboundedSender<Request>,
    telemetry: watch::Receiver<Arc<String>>,
    events: broadcast::Sender<Arc<String>>,
    caps: Arc<Caps>,
    map: Arc<PhantomMap>,
}

async fn live(ctx: &Context, a: &ServeArgs, mut session: SimSession, scenario: Option<Scenario>) -> Result<(), CliError> {
    let live_defaults = scenario.is_none();
    let tcp_addr = a.bind.or(live_defaults.then(|| SocketAddr::from(([127, 0, 0, 1], 7878))));
    let ws_addr = if a.no_ws { None } else { a.ws_bind.or(live_defaults.then(|| SocketAddr::from(([127, 0, 0, 1], 7879)))) };

    let tcp = match tcp_addr {
        Some(addr) => Some(TcpListener::bind(addr).await.map_err(|e| bind_error(addr, e))?),
        None => None,
    };
    let ws = match ws_addr {
        Some(addr) => Some(TcpListener::bind(addr).await.map_err(|e| bind_error(addr, e))?),
        None => None,
    };

    let (req_tx, mut req_rx) = mpsc::unbounded_channel();
    let initial = Arc::new(ServerMessage::Telemetry(Box::new(session.telemetry())).to_line());
    let (tel_tx, tel_rx) = watch::channel(initial);
    let (ev_tx, _) = broadcast::channel(256);
    let hub = Hub {
        requests: req_tx,
        telemetry: tel_rx,
        events: ev_tx.clone(),
        caps: Arc::new(session.caps()),
        map: Arc::new(session.map().clone()),
    };
    let (stop_tx, stop_rx) = watch::channel(false);

    if let Some(listener) = tcp {
        eprintln!("listening tcp {}", listener.local_addr()?);
        tokio::spawn(accept_tcp(listener, hub.clone(), stop_rx.clone()));
    }
    if let Some(listener) = ws {
        eprintln!("listening ws ws://{}/teleop", listener.local_addr()?);
        let app = Router::new().route("/teleop", get(ws_upgrade)).route("/", get(ws_upgrade)).with_state(hub.clone());
        let mut stop = stop_rx.clone();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop.wait_for(|s| *s).await;
                })
                .await;
        });
    }
    drop(hub);

    let mut telemetry_out: Option<Box<dyn std::io::Write + Send>> = match (&scenario, &a.telemetry_out) {
        (_, Some(p)) => Some(Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| CliError::new(Class::Failure, format!("{}: {e}", p.display())))?,
        ))),
        (Some(_), None) => Some(Box::new(std::io::BufWriter::new(std::io::stdout()))),
        (None, None) => None,
    };
    if let Some(w) = telemetry_out.as_mut() {
        writeln!(w, "{}", tel_tx.borrow().as_str())?;
    }

    let mut interval = tokio::time::interval(Duration::from_secs_f64(session.dt()));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let interrupt = tokio::signal::ctrl_c();
    tokio::pin!(interrupt);
    let end_tick = scenario.as_ref().map(|s| s.ticks).or(a.max_ticks);
    let mut sequence = 1;
    let mut summary_stats = (None, 0.0f64);
    loop {
        if end_tick.is_some_and(|end| session.tick() >= end) {
            break;
        }
        tokio::select! {
            _ = interval.tick() => {}
            _ = &mut interrupt => {
                eprintln!("interrupted at tick {}", session.tick());
                break;
            }
        }
        while let Ok(req) = req_rx.try_recv() {
            match req {
                Request::Cmd { cmd, reply } => {
                    let ack = session.handle_command(&cmd);
                    let _ = reply.try_send(ServerMessage::Ack(ack).to_line());
                }
                Request::Release { client_id, reply } => {
                    if !session.release_operator(&client_id) {
                        let msg = ServerMessage::Error { message: format!("{client_id} does not hold the operator lock") };
                        let _ = reply.try_send(msg.to_line());
                    }
                }
                Request::Disconnect { client_id } => {
                    session.release_operator(&client_id);
                }
            }
        }
        if let Some(s) = &scenario {
            for cmd in s.commands_at(session.tick(), sequence) {
                sequence += 1;
                session.handle_command(&cmd);
            }
        }
        let t = session.step();
        if t.tumor_reached && summary_stats.0.is_none() {
            summary_stats.0 = Some(t.tick);
        }
        summary_stats.1 = summary_stats.1.max(t.total_power_w);
        let line = ServerMessage::Telemetry(Box::new(t.clone())).to_line();
        if let Some(w) = telemetry_out.as_mut() {
            writeln!(w, "{line}")?;
        }
        if t.tick.is_multiple_of(session.publish_every().max(1)) {
            tel_tx.send_replace(Arc::new(line));
        }
        for e in session.drain_events() {
            let _ = ev_tx.send(Arc::new(ServerMessage::Event(e).to_line()));
        }
    }
    let _ = stop_tx.send(true);
    if let Some(mut w) = telemetry_out {
        w.flush()?;
    }

    match scenario {
        Some(s) => {
            let last = session.telemetry();
            let stats = session.stats().clone();
            let mut failures = Vec::new();
            if session.tick() < s.ticks {
                failures.push(format!("stopped at tick {} of {}", session.tick(), s.ticks));
            }
            if s.expect_tumor_reached && !last.tumor_reached {
                failures.push("tumor not reached at the end".into());
            }
            if s.expect_no_collision && stats.collision_ticks > 0 {
                failures.push(format!("{} ticks in wall contact", stats.collision_ticks));
            }
            let summary = ReplaySummary {
                scenario: s.name.clone(),
                ticks: session.tick(),
                tumor_reached: last.tumor_reached,
                first_tumor_tick: summary_stats.0,
                collision_ticks: stats.collision_ticks,
                max_power_w: summary_stats.1,
                power_cap_w: ctx.config.safety.power_cap_w,
                warning_ticks: stats.warning_ticks,
                final_tip_mm: last.tip_mm,
                passed: failures.is_empty(),
                checkpoint_failures: failures,
            };
            finish(ctx, a, &summary, session.events())
        }
        None => write_events(a.events_out.as_ref(), session.events()),
    }
}

async fn accept_tcp(listener: TcpListener, hub: Hub, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    tokio::spawn(tcp_client(stream, hub.clone()));
                }
                Err(e) => eprintln!("accept failed: {e}"),
            },
            _ = stop.wait_for(|s| *s) => return,
        }
    }
}

async fn tcp_client(stream: TcpStream, hub: Hub) {
    let (read, mut write) = stream.into_split();
    let (in_tx, in_rx) = mpsc::channel::<String>(CLIENT_QUEUE);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(CLIENT_QUEUE);
    tokio::spawn(async move {
        let mut lines = BufReader::new(read).lines();
        while let Ok(Some(line)) = lines.next_line().await {
            if in_tx.send(line).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(mut line) = out_rx.recv().await {
            line.push('\n');
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    });
    client_loop(hub, in_rx, out_tx).await;
    let _ = writer.await;
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(hub): State<Hub>) -> axum::response::Response {
    ws.on_upgrade(move |socket| ws_client(socket, hub))
}

async fn ws_client(mut socket: WebSocket, hub: Hub) {
    let (in_tx, in_rx) = mpsc::channel::<String>(CLIENT_QUEUE);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(CLIENT_QUEUE);
    let session = tokio::spawn(client_loop(hub, in_rx, out_tx));
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if in_tx.send(text.to_string()).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            outgoing = out_rx.recv() => match outgoing {
                Some(line) => {
                    if socket.send(Message::Text(line.into())).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
        }
    }
    drop(in_tx);
    let _ = session.await;
}

/// Protocol handling shared by both transports. Lines in, lines out.
async fn client_loop(hub: Hub, mut incoming: mpsc::Receiver<String>, out: mpsc::Sender<String>) {
    let mut telemetry = hub.telemetry.clone();
    let mut events = hub.events.subscribe();
    let mut role = Role::Operator;
    let mut client_id: Option<String> = None;
    loop {
        tokio::select! {
            line = incoming.recv() => {
                let Some(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                match ClientMessage::parse(&line) {
                    Ok(ClientMessage::Hello { schema, client_id: id, role: r }) => {
                        if schema.as_deref().is_some_and(|s| s != PROTOCOL) {
                            let msg = ServerMessage::Error { message: format!("unsupported schema {schema:?}, expected {PROTOCOL}") };
                            let _ = out.send(msg.to_line()).await;
                            continue;
                        }
                        role = r;
                        client_id = Some(id.clone());
                        let welcome = ServerMessage::Welcome {
                            schema: PROTOCOL.into(),
                            client_id: id,
                            role,
                            caps: (*hub.caps).clone(),
                            phantom: Box::new((*hub.map).clone()),
                        };
                        let _ = out.send(welcome.to_line()).await;
                        let latest = telemetry.borrow_and_update().as_str().to_string();
                        let _ = out.send(latest).await;
                    }
                    Ok(ClientMessage::Cmd(cmd)) => {
                        if role == Role::Observer {
                            let ack = Ack {
                                client_id: cmd.client_id.clone(),
                                sequence_number: cmd.sequence_number,
                                status: AckStatus::Rejected,
                                reason: Some("observer role is read-only".into()),
                                applied: AppliedCommand::default(),
                                clamped: Vec::new(),
                            };
                            let _ = out.send(ServerMessage::Ack(ack).to_line()).await;
                            continue;
                        }
                        client_id.get_or_insert_with(|| cmd.client_id.clone());
                        if hub.requests.send(Request::Cmd { cmd, reply: out.clone() }).is_err() {
                            break;
                        }
                    }
                    Ok(ClientMessage::Release { client_id: id }) => {
                        if hub.requests.send(Request::Release { client_id: id, reply: out.clone() }).is_err() {
                            break;
                        }
                    }
                    Err(message) => {
                        let _ = out.send(ServerMessage::Error { message }.to_line()).await;
                    }
                }
            }
            changed = telemetry.changed() => {
                if changed.is_err() {
                    break;
                }
                let line = telemetry.borrow_and_update().as_str().to_string();
                let _ = out.try_send(line);
            }
            event = events.recv() => match event {
                Ok(line) => {
                    let _ = out.try_send(line.as_str().to_string());
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    if let Some(id) = client_id {
        let _ = hub.requests.send(Request::Disconnect { client_id: id });
    }
}
