use std::fmt::Write;

use crate::episode::{replay_trace, AgentId, EditOp, EpisodeTrace, EventKind, Mode, Payload, TraceEvent, TripleRef};
use crate::error::Result;
use crate::kg::{EdgeDir, KnowledgeGraph};

fn section(agent: AgentId) -> &'static str {
    match agent {
        AgentId::Architect => "(1) Architect",
        AgentId::Navigator => "(2) Navigator",
        AgentId::Curator => "(3) Curator",
        AgentId::System => "system",
    }
}

fn triple(t: &TripleRef) -> String {
    format!("({}, {}, {})", t.subject, t.relation, t.object)
}

/// `A −r→ B` when walked subject to object, `A ←r− B` against it.
fn arrow(t: &TripleRef, forward: bool) -> (String, String, String) {
    if forward {
        (t.subject.clone(), format!(" −{}→ ", t.relation), t.object.clone())
    } else {
        (t.object.clone(), format!(" ←{}− ", t.relation), t.subject.clone())
    }
}

/// Chains hops into one arrow path. Without a known start, the walk
/// begins at the first hop's endpoint not shared with the second hop.
fn path_arrows(hops: &[TripleRef], start: Option<&str>) -> String {
    let mut out = String::new();
    let mut at: String = match (start, hops) {
        (Some(s), _) => s.to_string(),
        (None, [h0, h1, ..]) if h0.subject == h1.subject || h0.subject == h1.object => h0.object.clone(),
        (None, [h0, ..]) => h0.subject.clone(),
        (None, []) => return out,
    };
    for (i, h) in hops.iter().enumerate() {
        let forward = at == h.subject || at != h.object;
        let (from, link, to) = arrow(h, forward);
        if i == 0 {
            out.push_str(&from);
        }
        out.push_str(&link);
        out.push_str(&to);
        at = to;
    }
    out
}

fn render_event(out: &mut String, ev: &TraceEvent) {
    match &ev.payload {
        Payload::Init { .. } => {}
        Payload::Edit { op, triple: t, shaped_gain } => {
            let sign = if *op == EditOp::Add { "add" } else { "delete" };
            let _ = writeln!(out, "    {sign} {} (gain {shaped_gain:.3})", triple(t));
        }
        Payload::Hop { triple: t, direction, .. } => {
            let (from, link, to) = arrow(t, *direction == EdgeDir::Out);
            let _ = writeln!(out, "    hop {from}{link}{to}");
        }
        Payload::Backtrack { triple: t, .. } => {
            let _ = writeln!(out, "    backtrack over {}", triple(t));
        }
        Payload::Curate { text, tok, .. } => {
            let _ = writeln!(out, "    select \"{text}\" ({tok} tok)");
        }
        Payload::Stop { reason, path } => {
            if let Some(p) = path.as_deref().filter(|p| !p.is_empty()) {
                let _ = writeln!(out, "    path {}", path_arrows(p, None));
            }
            let _ = writeln!(out, "    stop: {reason}");
        }
    }
}

fn mode_line(mode: &Mode) -> String {
    match mode {
        Mode::Cap(b) => format!("cap (edge {}, lat {}, tok {})", b.beta_edge, b.beta_lat, b.beta_tok),
        Mode::Price(p) => format!("price (edge {}, lat {}, tok {})", p.lambda_edge, p.lambda_lat, p.lambda_tok),
    }
}

/// Human-readable rounds with per-agent sections. Depends on the trace only.
pub fn render_trace(trace: &EpisodeTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "question: {}", trace.question);
    let _ = writeln!(out, "mode: {}", mode_line(&trace.mode));
    if let Some(Payload::Init { anchors }) = trace.events.first().map(|e| &e.payload) {
        let names: Vec<&str> = anchors.iter().map(|a| a.name.as_str()).collect();
        let _ = writeln!(out, "anchors: {}", names.join(", "));
    }
    if trace.action_count() == 0 {
        out.push_str("no actions\n");
    }
    let mut round = None;
    let mut agent = None;
    for ev in trace.events.iter().filter(|e| e.kind != EventKind::Init) {
        if round != Some(ev.round) {
            let _ = writeln!(out, "round {}", ev.round + 1);
            round = Some(ev.round);
            agent = None;
        }
        if agent != Some(ev.agent) {
            let _ = writeln!(out, "  {}", section(ev.agent));
            agent = Some(ev.agent);
        }
        render_event(&mut out, ev);
    }
    if let Some(s) = &trace.summary {
        let c = s.counters.as_array();
        let _ = write!(out, "final: edge {}, lat {}, tok {}; subgraph {} triples", c[0], c[1], c[2], s.subgraph.len());
        if let Some(em) = s.em {
            let _ = write!(out, "; em {em}");
        }
        out.push('\n');
    }
    out
}

/// Audits the trace against `g`, then renders it. An audit failure is
/// returned as the error so callers cannot print an unverified rendering.
pub fn show_trace(g: &KnowledgeGraph, trace: &EpisodeTrace) -> Result<String> {
    replay_trace(g, trace)?;
    Ok(render_trace(trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Choice, Decision, Policy};
    use crate::episode::{Budgets, EpisodeConfig, EpisodeState};
    use crate::harness::{run_episode, QAExample, RunOptions};
    use crate::kg::load_triples;
    use rand::RngCore;
    use std::sync::atomic::{AtomicUsize, Ordering};

    const CASE_KB: &str = "Moving Violations|starred_actors|Brian Backer
Moving Violations|starred_actors|Jennifer Tilly
Moving Violations|starred_actors|John Murray
Moving Violations|directed_by|Neal Israel
";

    /// Takes the first feasible option until each agent's quota is spent,
    /// then stops: three edits, two hops, two selections.
    #[derive(Default)]
    struct Quota([AtomicUsize; 3]);
    impl Policy for Quota {
        fn choose(&self, d: &Decision, _greedy: bool, _rng: &mut dyn RngCore) -> crate::Result<Choice> {
            let n = d.n_candidates();
            let used = &self.0[d.agent.index()];
            let quota = [3, 2, 2][d.agent.index()];
            let first = (0..n).find(|&i| d.mask[i]);
            let index = match first {
                Some(i) if used.load(Ordering::SeqCst) < quota => {
                    used.fetch_add(1, Ordering::SeqCst);
                    i
                }
                _ => n,
            };
            Ok(Choice { index, log_prob: 0.0, logits: vec![0.0; n + 1] })
        }
    }

    fn case_trace() -> (KnowledgeGraph, EpisodeTrace) {
        let g = load_triples(CASE_KB).unwrap();
        let ex = QAExample {
            question: "who co-starred with [Brian Backer]".into(),
            anchors: vec!["Brian Backer".into()],
            gold_paths: vec![],
            answers: vec![],
        };
        let mode = Mode::Cap(Budgets::new(10.0, 10.0, 64.0).unwrap());
        let out = run_episode(&g, &ex, &Quota::default(), mode, EpisodeConfig::default(), 3, RunOptions::default()).unwrap();
        (g, out.trace)
    }

    #[test]
    fn case_trace_has_three_sections_each_ending_in_stop() {
        let (g, trace) = case_trace();
        let text = show_trace(&g, &trace).unwrap();
        for name in ["(1) Architect", "(2) Navigator", "(3) Curator"] {
            assert!(text.contains(name), "{text}");
        }
        for agent in [AgentId::Architect, AgentId::Navigator, AgentId::Curator] {
            let last = trace.events.iter().filter(|e| e.agent == agent).last().unwrap();
            assert_eq!(last.kind, EventKind::Stop, "{agent:?}");
        }
        assert!(text.contains("select \"Moving Violations --- starred_actors: Brian Backer\" (6 tok)"), "{text}");
        assert!(text.contains("final: edge"), "{text}");
    }

    #[test]
    fn rendering_is_pure() {
        let (_, trace) = case_trace();
        assert_eq!(render_trace(&trace), render_trace(&trace.clone()));
    }

    #[test]
    fn empty_trace_renders_no_actions() {
        let g = load_triples(CASE_KB).unwrap();
        let mut s = EpisodeState::new(&g, "who is [Brian Backer]", Mode::Cap(Budgets::new(0.0, 0.0, 0.0).unwrap()), EpisodeConfig::default(), 0).unwrap();
        s.finalize_trace(None);
        let text = show_trace(&g, &s.trace).unwrap();
        assert!(text.contains("no actions"), "{text}");
    }

    #[test]
    fn tampered_trace_fails_audit() {
        let (g, mut trace) = case_trace();
        let ev = trace.events.iter_mut().find(|e| e.kind == EventKind::Edit).unwrap();
        ev.cost.edge = 0;
        let err = show_trace(&g, &trace).unwrap_err().to_string();
        assert!(err.contains("audit failure"), "{err}");
    }

    #[test]
    fn path_arrows_follow_direction() {
        let t = |s: &str, r: &str, o: &str| TripleRef { id: crate::kg::TripleId(0), subject: s.into(), relation: r.into(), object: o.into() };
        let hops = [t("M", "starred_actors", "A"), t("M", "starred_actors", "B")];
        assert_eq!(path_arrows(&hops, Some("A")), "A ←starred_actors− M −starred_actors→ B");
        assert_eq!(path_arrows(&hops, None), "A ←starred_actors− M −starred_actors→ B");
        assert_eq!(path_arrows(&hops[..1], None), "M −starred_actors→ A");
    }
}
