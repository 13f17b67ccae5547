//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Built without the libtest harness so the lines are never
//! captured.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use nourid::accuracy::{PropertyEvaluation, evaluate_forecasts, matcher_accuracy, synthetic_corpus, validator_accuracy};
use nourid::config::Config;
use nourid::scenario::{ScenarioOptions, run_in_process};
use nourid::service;
use nourid::store::Store;
use nourid_core::analytics::{ConsumptionSeries, Granularity, aggregate};
use nourid_core::deid::{IssuanceKey, parse_deid, sign_payload, verify_payload};
use nourid_core::qr::{EccLevel, QrSymbol, RenderFormat, codeword_positions, encode_qr, interleaved_block_map, render_qr};
use nourid_core::records::{DocumentKind, PropertyDocument};
use nourid_core::template::MatchResult;
use nourid_core::validation::{ValidationReport, validate_document};
use nourid_core::workflow::{
    Actor, DecisionVerdict, EventKind, RequestBook, RequestState, WorkflowEvent, next_state, replay, verify_chain,
};
use nourid_core::{Cin, Millis, ParcelId, PropertyType};
use rand::rngs::ChaCha8Rng;
use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};

const SEED: u64 = 20_240_901;
const KEY_HEX: &str = "5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a";

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn matcher() -> Outcome {
    let c = Config::default();
    let dim = c.population.template_dimension;
    let t = Instant::now();
    let a = matcher_accuracy(10_000, c.matcher.noise_sigma, dim, SEED).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let b = matcher_accuracy(10_000, c.matcher.noise_sigma, dim, SEED).map_err(|e| e.to_string())?;
    let same = (a.balanced_accuracy, a.threshold) == (b.balanced_accuracy, b.threshold);
    let detail = format!(
        "balanced accuracy {:.4} at threshold {:.4} on 10000+10000 pairs, {secs:.2} s, repeatable {same}",
        a.balanced_accuracy, a.threshold
    );
    ensure((0.98..1.0).contains(&a.balanced_accuracy) && same && secs < 10.0, detail)
}

fn validator() -> Outcome {
    let c = Config::default();
    let t = Instant::now();
    let r = validator_accuracy(10_000, 0.2, c.validator.detectability, SEED);
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "accuracy {:.4} on {} documents ({} defective, {} missed, {} false alarms), {secs:.2} s",
        r.accuracy, r.documents, r.defective, r.false_negatives, r.false_positives
    );
    ensure(r.documents == 10_000 && r.accuracy >= 0.98 && secs < 10.0, detail)
}

/// The 300-persona run, kept for the DE-ID and QR checks.
struct Run {
    book: RequestBook,
    key: IssuanceKey,
}

fn workflow_latency(run: &mut Option<Run>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = Config { issuance_key: Some(KEY_HEX.into()), ..Config::default() };
    let opts = ScenarioOptions { n_per_persona: 100, seed: SEED, forecast_sample: 0, ..ScenarioOptions::default() };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    let report = rt.block_on(run_in_process(config, dir.path(), &opts)).map_err(|e| e.to_string())?;
    let book = Store::replay_log(&service::state_dir(dir.path())).map_err(|e| e.to_string())?.book;
    *run = Some(Run { book, key: IssuanceKey::from_hex(KEY_HEX).unwrap() });
    let e = &report.end_to_end;
    let o = &report.outcomes;
    let detail = format!(
        "{} personas, {} issued, {} errors, end-to-end p50 {:.0} ms p95 {:.0} ms max {:.0} ms, wall clock {:.1} s",
        report.personas_run,
        o.issued,
        o.errors,
        e.p50_ms,
        e.p95_ms,
        e.max_ms,
        report.wall_clock_ms as f64 / 1000.0
    );
    ensure(report.personas_run == 300 && o.issued == 300 && e.count == 300 && e.p95_ms < 60_000.0, detail)
}

fn passing() -> MatchResult {
    MatchResult { score: 0.93, threshold: 0.6, is_match: true }
}

fn reports(parcels: &[ParcelId], owner: &Cin, issue_date: &str) -> Vec<ValidationReport> {
    let today = NaiveDate::from_ymd_opt(2025, 6, 1).unwrap();
    let mut out = Vec::new();
    for p in parcels {
        for kind in DocumentKind::ALL {
            let mut fields = BTreeMap::new();
            for key in kind.required_fields() {
                fields.insert(key.to_string(), format!("{key} value"));
            }
            fields.insert("owner_cin".into(), owner.to_string());
            fields.insert("issue_date".into(), issue_date.into());
            out.push(validate_document(&PropertyDocument::sealed(p.clone(), kind, fields), owner, today));
        }
    }
    out
}

fn state_machine() -> Outcome {
    let legal: BTreeSet<(RequestState, RequestState)> = [
        (RequestState::Draft, RequestState::IdentityVerified),
        (RequestState::IdentityVerified, RequestState::PropertiesSelected),
        (RequestState::PropertiesSelected, RequestState::DocumentsValidated),
        (RequestState::DocumentsValidated, RequestState::PendingApproval),
        (RequestState::PendingApproval, RequestState::Approved),
        (RequestState::PendingApproval, RequestState::Rejected),
        (RequestState::Approved, RequestState::Issued),
    ]
    .into();
    let mut found = BTreeSet::new();
    for s in RequestState::ALL {
        for e in EventKind::ALL {
            if let Some(t) = next_state(s, e) {
                found.insert((s, t));
            }
        }
    }
    let pairs = RequestState::ALL.len() * EventKind::ALL.len();
    if found != legal {
        return Err(format!("transition table has {} edges, expected {}", found.len(), legal.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut book = RequestBook::new();
    let mut now = 0i64;
    let mut tick = || {
        now += 1_000;
        Millis(now)
    };
    let n = 1_000u32;
    for i in 0..n {
        book.create(&format!("acct-{}", i % 50), tick());
    }
    let (mut applied, mut refused) = (0usize, 0usize);
    for _ in 0..n * 8 {
        let id = rng.random_range(1..=u64::from(n));
        let before = book.get(id).unwrap().clone();
        let owner: Cin = format!("AC{id:06}").parse().unwrap();
        let parcels = vec![ParcelId::new(4, id as u32 * 2), ParcelId::new(4, id as u32 * 2 + 1)];
        let at = tick();
        let result = match rng.random_range(0..8) {
            0 => book.transition(id, WorkflowEvent::IdentityVerified { cin: owner.clone(), match_result: passing() }, Actor::System, None, at).map(drop),
            1 => book.attach_properties(id, &parcels, |_| Some(owner.clone()), at).map(drop),
            2 => {
                let date = if rng.random_bool(0.9) { "2024-03-03" } else { "2001-01-01" };
                let sel = if before.selected_parcels.is_empty() { parcels.clone() } else { before.selected_parcels.clone() };
                book.transition(id, WorkflowEvent::DocumentsValidated { reports: reports(&sel, &owner, date) }, Actor::System, None, at).map(drop)
            }
            3 => book.submit_for_approval(id, at).map(drop),
            4 => book.decide("off", id, DecisionVerdict::Approve, "", before.version, at).map(drop),
            5 => book.decide("off", id, DecisionVerdict::Reject, "incomplete", before.version, at).map(drop),
            6 => book.issue(id, |_| Some(PropertyType::Commercial), at).map(drop),
            _ => book.decide("off", id, DecisionVerdict::Approve, "", before.version.wrapping_sub(1), at).map(drop),
        };
        match result {
            Ok(()) => applied += 1,
            Err(_) if book.get(id).unwrap() == &before => refused += 1,
            Err(e) => return Err(format!("refused move {e} still changed request {id}")),
        }
    }
    for r in book.requests() {
        let trail = book.audit_trail(r.request_id).map_err(|e| e.to_string())?;
        verify_chain(trail).map_err(|e| format!("request {}: {e}", r.request_id))?;
        if replay(trail).map_err(|e| e.to_string())? != *r {
            return Err(format!("replay of request {} differs", r.request_id));
        }
    }
    let states: BTreeSet<RequestState> = book.requests().map(|r| r.state).collect();
    ensure(
        states.len() >= 6,
        format!(
            "{pairs} state x event pairs give exactly {} legal edges; {n} randomized requests ({applied} moves applied, {refused} refused, {} states reached) replay exactly",
            legal.len(),
            states.len()
        ),
    )
}

fn mod97_oracle(s: &str) -> u32 {
    let (body, check) = s.split_at(s.len() - 2);
    let mut decimal = String::new();
    for c in body.chars().filter(|c| *c != '-') {
        decimal.push_str(&format!("{:02}", c.to_digit(36).unwrap_or(99)));
    }
    decimal.push_str(check);
    decimal.bytes().fold(0, |r, d| (r * 10 + u32::from(d.wrapping_sub(b'0'))) % 97)
}

fn deid_integrity(run: &Option<Run>) -> Outcome {
    let run = run.as_ref().ok_or("no issued DE-IDs: the persona run did not complete")?;
    let issued: Vec<_> = run.book.issued_deids().collect();
    let pairs: BTreeSet<_> = issued.iter().map(|d| (d.cin.clone(), d.parcel_id.clone())).collect();
    let duplicates = issued.len() - pairs.len();
    let bad_check = issued.iter().filter(|d| mod97_oracle(&d.deid) != 1).count();
    let alphabet: Vec<char> = ('0'..='9').chain('A'..='Z').chain(['-', 'a', ' ']).collect();
    let (mut edits, mut accepted) = (0usize, 0usize);
    for d in &issued {
        let chars: Vec<char> = d.deid.chars().collect();
        for i in 0..chars.len() {
            for &c in &alphabet {
                if c == chars[i] {
                    continue;
                }
                let mut e = chars.clone();
                e[i] = c;
                edits += 1;
                if parse_deid(&e.into_iter().collect::<String>()).is_ok() {
                    accepted += 1;
                }
            }
        }
    }
    let detail = format!(
        "{} issued, {duplicates} duplicate (cin, parcel) pairs, {bad_check} failing the MOD 97 oracle, {accepted}/{edits} single-character edits accepted",
        issued.len()
    );
    ensure(!issued.is_empty() && duplicates == 0 && bad_check == 0 && accepted == 0, detail)
}

fn corrupt_quarter(symbol: &mut QrSymbol, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let positions = codeword_positions(symbol.version);
    let blocks = interleaved_block_map(symbol.version, symbol.ecc_level);
    let n_blocks = blocks.iter().max().unwrap() + 1;
    let mut flipped = 0;
    for b in 0..n_blocks {
        let members: Vec<usize> = (0..blocks.len()).filter(|&i| blocks[i] == b).collect();
        for j in sample(rng, members.len(), members.len() / 4).into_vec() {
            for (x, y) in positions[members[j]] {
                symbol.flip(x, y);
                flipped += 1;
            }
        }
    }
    (flipped, positions.len() * 8)
}

fn qr(run: &Option<Run>) -> Outcome {
    let run = run.as_ref().ok_or("no issued DE-IDs: the persona run did not complete")?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut total, mut clean_ok, mut corrupt_ok, mut min_share) = (0, 0, 0, 1.0f64);
    for d in run.book.issued_deids() {
        total += 1;
        let uri = sign_payload(&d.deid, d.issued_at.as_secs().max(0) as u64, &run.key).uri;
        if verify_payload(uri.as_bytes(), &run.key).is_err() {
            return Err(format!("payload for {} does not verify", d.deid));
        }
        let mut symbol = encode_qr(uri.as_bytes(), EccLevel::H).map_err(|e| e.to_string())?;
        let svg = String::from_utf8(render_qr(&symbol, RenderFormat::Svg)).map_err(|e| e.to_string())?;
        let pgm = render_qr(&symbol, RenderFormat::Pgm);
        if common::decode_svg(&svg).as_deref() == Some(uri.as_str()) && common::decode_pgm(&pgm).as_deref() == Some(uri.as_str()) {
            clean_ok += 1;
        }
        let (flipped, modules) = corrupt_quarter(&mut symbol, &mut rng);
        min_share = min_share.min(flipped as f64 / modules as f64);
        if common::decode_pgm(&render_qr(&symbol, RenderFormat::Pgm)).as_deref() == Some(uri.as_str()) {
            corrupt_ok += 1;
        }
    }
    let detail = format!(
        "{clean_ok}/{total} issued symbols decode (SVG and PGM); {corrupt_ok}/{total} decode with 25% of each block's codewords inverted (>= {:.1}% of data modules) at ECC H",
        100.0 * min_share
    );
    ensure(total > 0 && clean_ok == total && corrupt_ok == total, detail)
}

fn forecasting() -> Outcome {
    let c = Config::default();
    let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
    let t = Instant::now();
    let corpus = synthetic_corpus(50, start, 731, &c.analytics.load, SEED).map_err(|e| e.to_string())?;
    let r = evaluate_forecasts(&corpus, &c.analytics.model, SEED).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let mean = |f: fn(&PropertyEvaluation) -> f64| r.properties.iter().map(f).sum::<f64>() / r.properties.len() as f64;
    let detail = format!(
        "model beats seasonal naive on {}/{} two-year series (mean MAPE {:.3} vs {:.3}), {secs:.1} s",
        r.model_better,
        r.properties.len(),
        mean(|p| p.model_mape),
        mean(|p| p.baseline_mape)
    );
    ensure(r.properties.len() == 50 && r.share_better >= 0.8 && secs < 60.0, detail)
}

fn aggregation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let origin = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut worst = 0.0f64;
    let n = 200;
    for _ in 0..n {
        let start: NaiveDateTime = origin + TimeDelta::hours(rng.random_range(0..24 * 3_000));
        let len = rng.random_range(1..24 * 800);
        let kwh: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.05) { rng.random::<f64>() * 1e4 } else { rng.random::<f64>() * 3.0 })
            .collect();
        let s = ConsumptionSeries::new("AGG", PropertyType::Household, start, kwh).map_err(|e| e.to_string())?;
        let totals: Vec<f64> = [Granularity::Day, Granularity::Week, Granularity::Month, Granularity::Year]
            .iter()
            .map(|g| aggregate(&s, *g).map(|v| v.buckets.iter().map(|b| b.total_kwh).sum::<f64>()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let year = totals[3];
        for t in &totals[..3] {
            worst = worst.max((t - year).abs() / year.abs().max(f64::MIN_POSITIVE));
        }
    }
    ensure(worst <= 1e-9, format!("{n} random series: worst relative gap between day/week/month sums and yearly total {worst:.2e}"))
}

fn persistence() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    let out = rt.block_on(common::process::crash_and_recover(root.path(), 10, 30))?;
    Ok(format!(
        "SIGKILL after {} acknowledged steps: all survive, snapshot recovery equals full replay, {} requests issued after restart",
        out.acks.len(),
        out.issued_after_restart
    ))
}

fn main() -> ExitCode {
    // Keep failure output to the single summary line per criterion.
    std::panic::set_hook(Box::new(|_| {}));
    let mut run = None;
    let check = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let took = Duration::from_millis(t.elapsed().as_millis() as u64);
        match &outcome {
            Ok(d) => println!("PASS  {name}: {d} [{took:?}]"),
            Err(d) => println!("FAIL  {name}: {d} [{took:?}]"),
        }
        outcome.is_ok()
    };
    let results = [
        check("matcher accuracy", &mut matcher),
        check("validator accuracy", &mut validator),
        check("workflow latency", &mut || workflow_latency(&mut run)),
        check("state machine", &mut state_machine),
        check("DE-ID integrity", &mut || deid_integrity(&run)),
        check("QR correctness", &mut || qr(&run)),
        check("forecasting", &mut forecasting),
        check("aggregation conservation", &mut aggregation),
        check("persistence", &mut persistence),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} acceptance criteria met", results.len());
    if passed == results.len() { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
