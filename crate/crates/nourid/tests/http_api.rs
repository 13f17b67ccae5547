//! The HTTP surface end to end against an in-process service.

mod common;

use std::time::Duration;

use common::{Harness, PASSWORD, decode_pgm, decode_svg, test_config};
use nourid::registry::{inject_defects, seed_population};
use nourid_core::deid::verify_payload;
use reqwest::{Method, StatusCode};
use serde_json::{Value, json};

#[tokio::test(flavor = "multi_thread")]
async fn citizen_happy_path_reaches_issued_with_a_decodable_qr() {
    let h = Harness::start(test_config()).await;
    let citizen = h.citizen("amina@example.ma").await;
    let officer = h.officer("officer@srm.example").await;
    let (id, version) = h.pending_request(&citizen, 0).await;

    let (s, queue) = h.call(Method::GET, "/officer/queue", Some(&officer), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(queue["total"], 1);
    assert_eq!(queue["items"][0]["request_id"], id);
    let (s, detail) = h.call(Method::GET, &format!("/officer/requests/{id}"), Some(&officer), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(detail["audit"].as_array().unwrap().len() as u64, version);

    let (s, r) = h
        .call(Method::POST, &format!("/officer/requests/{id}/decision"), Some(&officer), Some(json!({ "verdict": "approve", "expected_version": version })))
        .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["state"], "issued");
    let deids = r["deids"].as_array().unwrap().clone();
    let (cin, _, _) = h.identity(0);
    let owned = h.state().registry.list_parcels_by_owner(&cin).unwrap().len();
    assert_eq!(deids.len(), owned);

    let (s, trail) = h.call(Method::GET, &format!("/requests/{id}/audit"), Some(&citizen), None).await;
    assert_eq!(s, StatusCode::OK);
    let kinds: Vec<&str> = trail["events"].as_array().unwrap().iter().map(|e| e["payload"]["kind"].as_str().unwrap_or("?")).collect();
    assert_eq!(kinds.len(), 7, "{kinds:?}");

    for d in deids {
        let deid = d["deid"].as_str().unwrap();
        let (s, card) = h.call(Method::GET, &format!("/deids/{deid}"), Some(&citizen), None).await;
        assert_eq!(s, StatusCode::OK, "{card}");
        let uri = card["qr_uri"].as_str().unwrap();
        assert!(verify_payload(uri.as_bytes(), &h.state().key).is_ok());
        let (s, svg) = h.raw(Method::GET, &format!("/deids/{deid}/qr.svg"), Some(&citizen), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(decode_svg(std::str::from_utf8(&svg).unwrap()).as_deref(), Some(uri));
        let (_, pgm) = h.raw(Method::GET, &format!("/deids/{deid}/qr.pgm"), Some(&citizen), None).await;
        assert_eq!(decode_pgm(&pgm).as_deref(), Some(uri));

        let mut totals = Vec::new();
        for g in ["day", "week", "month", "year"] {
            let (s, v) = h.call(Method::GET, &format!("/deids/{deid}/consumption?granularity={g}"), Some(&citizen), None).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            let sum: f64 = v["buckets"].as_array().unwrap().iter().map(|b| b["total_kwh"].as_f64().unwrap()).sum();
            let total = v["total_kwh"].as_f64().unwrap();
            assert!((sum - total).abs() <= 1e-9 * total);
            assert!(v["subsidy"]["tier"].is_string());
            totals.push(total);
        }
        assert!(totals.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-9 * w[0]));
        let (s, f) = h.call(Method::GET, &format!("/deids/{deid}/forecast?horizon=7"), Some(&citizen), None).await;
        assert_eq!(s, StatusCode::OK, "{f}");
        assert_eq!(f["points"].as_array().unwrap().len(), 7);
        assert_eq!(f["baseline"].as_array().unwrap().len(), 7);
        assert!(f["points"].as_array().unwrap().iter().all(|p| p["kwh"].as_f64().unwrap() >= 0.0));
        assert!(f["training"]["validation_mape"].is_number());
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn every_endpoint_enforces_its_role() {
    let h = Harness::start(test_config()).await;
    let citizen = h.citizen("c@example.ma").await;
    let officer = h.officer("o@srm.example").await;
    let citizen_only = [
        (Method::POST, "/requests"),
        (Method::GET, "/requests"),
        (Method::GET, "/requests/1"),
        (Method::GET, "/requests/1/audit"),
        (Method::POST, "/requests/1/identity"),
        (Method::GET, "/properties?cin=AB123456"),
        (Method::POST, "/requests/1/properties"),
        (Method::POST, "/requests/1/validate"),
        (Method::POST, "/requests/1/submit"),
        (Method::GET, "/deids/DE-01-H-AAAAAAAAAAAAAAAA-00"),
        (Method::GET, "/deids/DE-01-H-AAAAAAAAAAAAAAAA-00/qr.svg"),
        (Method::GET, "/deids/DE-01-H-AAAAAAAAAAAAAAAA-00/consumption?granularity=day"),
        (Method::GET, "/deids/DE-01-H-AAAAAAAAAAAAAAAA-00/forecast?horizon=7"),
    ];
    let officer_only = [
        (Method::GET, "/officer/queue"),
        (Method::GET, "/officer/requests/1"),
        (Method::POST, "/officer/requests/1/decision"),
    ];
    let body = || Some(json!({}));
    for (m, p) in &citizen_only {
        assert_eq!(h.call(m.clone(), p, Some(&officer), body()).await.0, StatusCode::FORBIDDEN, "officer on {m} {p}");
    }
    for (m, p) in &officer_only {
        assert_eq!(h.call(m.clone(), p, Some(&citizen), body()).await.0, StatusCode::FORBIDDEN, "citizen on {m} {p}");
    }
    for (m, p) in citizen_only.iter().chain(&officer_only) {
        assert_eq!(h.call(m.clone(), p, None, body()).await.0, StatusCode::UNAUTHORIZED, "anonymous {m} {p}");
        let (s, v) = h.call(m.clone(), p, Some("not-a-token"), body()).await;
        assert_eq!(s, StatusCode::UNAUTHORIZED, "forged token {m} {p}");
        assert_eq!(v["code"], "unauthorized");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn expired_sessions_are_refused() {
    let mut config = test_config();
    config.session_ttl_secs = 1;
    let h = Harness::start(config).await;
    let token = h.citizen("short@example.ma").await;
    assert_eq!(h.call(Method::GET, "/requests", Some(&token), None).await.0, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(1_100)).await;
    let (s, v) = h.call(Method::GET, "/requests", Some(&token), None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(v["code"], "unauthorized");
}

#[tokio::test(flavor = "multi_thread")]
async fn account_rules_and_uniform_login_errors() {
    let h = Harness::start(test_config()).await;
    let reg = |email: &str, pw: &str| json!({ "full_name": "X", "email": email, "phone": "", "password": pw });
    assert_eq!(h.call(Method::POST, "/accounts", None, Some(reg("a@example.ma", PASSWORD))).await.0, StatusCode::CREATED);
    let (s, v) = h.call(Method::POST, "/accounts", None, Some(reg("A@Example.ma", PASSWORD))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("duplicate_email")));
    let (s, v) = h.call(Method::POST, "/accounts", None, Some(reg("b@example.ma", "ninechars"))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("weak_password")));
    let (s, v) = h.call(Method::POST, "/accounts", None, Some(reg("no-at-sign", PASSWORD))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_email")));

    let wrong = h.raw(Method::POST, "/sessions", None, Some(json!({ "email": "a@example.ma", "password": "wrong password!" }))).await;
    let unknown = h.raw(Method::POST, "/sessions", None, Some(json!({ "email": "z@example.ma", "password": "wrong password!" }))).await;
    assert_eq!(wrong.0, StatusCode::UNAUTHORIZED);
    assert_eq!(wrong, unknown);

    let (s, v) = h.call(Method::POST, "/accounts", None, Some(json!({ "email": 3 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["code"].is_string() && v["message"].is_string() && v.get("details").is_some());
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_decisions_have_one_winner() {
    let h = Harness::start(test_config()).await;
    let citizen = h.citizen("c@example.ma").await;
    let (a, b) = (h.officer("o1@srm.example").await, h.officer("o2@srm.example").await);
    let (id, version) = h.pending_request(&citizen, 1).await;
    let path = format!("/officer/requests/{id}/decision");
    let approve = json!({ "verdict": "approve", "expected_version": version });
    let reject = json!({ "verdict": "reject", "reason": "boundary dispute", "expected_version": version });
    let (ra, rb) = tokio::join!(
        h.call(Method::POST, &path, Some(&a), Some(approve.clone())),
        h.call(Method::POST, &path, Some(&b), Some(reject))
    );
    let mut statuses = [ra.0, rb.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT], "{} / {}", ra.1, rb.1);
    let loser = if ra.0 == StatusCode::CONFLICT { ra.1 } else { rb.1 };
    assert_eq!(loser["code"], "version_conflict");
    // Replaying the winning call with its now-stale version changes nothing.
    let before = h.call(Method::GET, &format!("/requests/{id}"), Some(&citizen), None).await.1;
    let (s, v) = h.call(Method::POST, &path, Some(&a), Some(approve)).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    assert_eq!(h.call(Method::GET, &format!("/requests/{id}"), Some(&citizen), None).await.1, before);
}

#[tokio::test(flavor = "multi_thread")]
async fn stale_citizen_versions_conflict() {
    let h = Harness::start(test_config()).await;
    let token = h.citizen("c@example.ma").await;
    let (_, r) = h.call(Method::POST, "/requests", Some(&token), None).await;
    let id = r["request_id"].as_u64().unwrap();
    let (cin, name, dob) = h.identity(2);
    let body = json!({ "cin": cin, "full_name": name, "date_of_birth": dob, "simulate_capture": true, "expected_version": 7 });
    let (s, v) = h.call(Method::POST, &format!("/requests/{id}/identity"), Some(&token), Some(body)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("version_conflict")), "{v}");
}

#[tokio::test(flavor = "multi_thread")]
async fn requests_and_deids_are_private_to_their_owner() {
    let h = Harness::start(test_config()).await;
    let owner = h.citizen("owner@example.ma").await;
    let other = h.citizen("other@example.ma").await;
    let officer = h.officer("o@srm.example").await;
    let (id, version) = h.pending_request(&owner, 3).await;
    for p in [format!("/requests/{id}"), format!("/requests/{id}/audit")] {
        assert_eq!(h.call(Method::GET, &p, Some(&other), None).await.0, StatusCode::NOT_FOUND);
    }
    let (s, _) = h.call(Method::POST, &format!("/requests/{id}/submit"), Some(&other), Some(json!({}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (cin, _, _) = h.identity(3);
    assert_eq!(h.call(Method::GET, &format!("/properties?cin={cin}"), Some(&other), None).await.0, StatusCode::FORBIDDEN);
    let (_, r) = h
        .call(Method::POST, &format!("/officer/requests/{id}/decision"), Some(&officer), Some(json!({ "verdict": "approve", "expected_version": version })))
        .await;
    let deid = r["deids"][0]["deid"].as_str().unwrap().to_string();
    assert_eq!(h.call(Method::GET, &format!("/deids/{deid}"), Some(&owner), None).await.0, StatusCode::OK);
    assert_eq!(h.call(Method::GET, &format!("/deids/{deid}"), Some(&other), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(h.call(Method::GET, &format!("/deids/{deid}/qr.svg"), Some(&other), None).await.0, StatusCode::NOT_FOUND);
    let (s, list) = h.call(Method::GET, "/requests", Some(&other), None).await;
    assert_eq!((s, list["items"].as_array().unwrap().len()), (StatusCode::OK, 0));

    // A second request for the same parcels is refused once they are issued.
    let (_, r2) = h.call(Method::POST, "/requests", Some(&owner), None).await;
    let id2 = r2["request_id"].as_u64().unwrap();
    let (cin, name, dob) = h.identity(3);
    let body = json!({ "cin": cin, "full_name": name, "date_of_birth": dob, "simulate_capture": true });
    while h.call(Method::POST, &format!("/requests/{id2}/identity"), Some(&owner), Some(body.clone())).await.0 != StatusCode::OK {}
    let parcels: Vec<Value> = r["selected_parcels"].as_array().unwrap().clone();
    let (s, v) = h.call(Method::POST, &format!("/requests/{id2}/properties"), Some(&owner), Some(json!({ "parcel_ids": parcels }))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("duplicate_request")), "{v}");
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_inputs_get_machine_readable_errors() {
    let h = Harness::start(test_config()).await;
    let token = h.citizen("c@example.ma").await;
    let (_, r) = h.call(Method::POST, "/requests", Some(&token), None).await;
    let id = r["request_id"].as_u64().unwrap();
    let ident = |cin: &str| json!({ "cin": cin, "full_name": "X", "date_of_birth": "1990-01-01", "simulate_capture": true });
    let (s, v) = h.call(Method::POST, &format!("/requests/{id}/identity"), Some(&token), Some(ident("12AB"))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_cin")));
    let unseeded = (0..).map(|i| format!("ZZ{i:06}")).find(|c| h.state().registry.lookup_identity(c).is_err()).unwrap();
    let (s, v) = h.call(Method::POST, &format!("/requests/{id}/identity"), Some(&token), Some(ident(&unseeded))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("cin_not_found")));

    // Right CIN, wrong name: the report says why.
    let (cin, _, dob) = h.identity(4);
    let body = json!({ "cin": cin, "full_name": "Someone Else", "date_of_birth": dob, "simulate_capture": true });
    let (s, v) = h.call(Method::POST, &format!("/requests/{id}/identity"), Some(&token), Some(body)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("identity_check_failed")), "{v}");
    // An impostor template fails the biometric step.
    let (cin, name, dob) = h.identity(4);
    let dim = h.state().registry.identities().nth(4).unwrap().reference_template.dimension();
    let probe: Vec<f64> = (0..dim).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let body = json!({ "cin": cin, "full_name": name, "date_of_birth": dob, "probe_template": probe });
    let (s, v) = h.call(Method::POST, &format!("/requests/{id}/identity"), Some(&token), Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");

    // Skipping ahead is an illegal transition.
    let (s, v) = h.call(Method::POST, &format!("/requests/{id}/submit"), Some(&token), Some(json!({}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("invalid_transition")));
    let (s, _) = h.call(Method::GET, "/requests/9999", Some(&token), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn defective_documents_block_submission() {
    let config = test_config();
    let clean = seed_population(&config.population, config.seed).unwrap();
    let dirty = inject_defects(&clean, 1.0, 1.0, 5);
    let h = Harness::with_registry(config, dirty).await;
    let token = h.citizen("c@example.ma").await;
    let (_, r) = h.call(Method::POST, "/requests", Some(&token), None).await;
    let id = r["request_id"].as_u64().unwrap();
    let (cin, name, dob) = h.identity(0);
    let body = json!({ "cin": cin, "full_name": name, "date_of_birth": dob, "simulate_capture": true });
    while h.call(Method::POST, &format!("/requests/{id}/identity"), Some(&token), Some(body.clone())).await.0 != StatusCode::OK {}
    let (_, props) = h.call(Method::GET, &format!("/properties?cin={cin}"), Some(&token), None).await;
    let parcels: Vec<Value> = props["parcels"].as_array().unwrap().iter().map(|p| p["parcel_id"].clone()).collect();
    h.call(Method::POST, &format!("/requests/{id}/properties"), Some(&token), Some(json!({ "parcel_ids": parcels }))).await;
    let (s, v) = h.call(Method::POST, &format!("/requests/{id}/validate"), Some(&token), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["all_valid"], false);
    let (s, v) = h.call(Method::POST, &format!("/requests/{id}/submit"), Some(&token), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("validation_incomplete")));
}

#[tokio::test(flavor = "multi_thread")]
async fn analytics_parameters_are_checked() {
    let h = Harness::start(test_config()).await;
    let citizen = h.citizen("c@example.ma").await;
    let officer = h.officer("o@srm.example").await;
    let (id, version) = h.pending_request(&citizen, 5).await;
    let (_, r) = h
        .call(Method::POST, &format!("/officer/requests/{id}/decision"), Some(&officer), Some(json!({ "verdict": "approve", "expected_version": version })))
        .await;
    let deid = r["deids"][0]["deid"].as_str().unwrap().to_string();
    let (s, v) = h.call(Method::GET, &format!("/deids/{deid}/consumption?granularity=hourly"), Some(&citizen), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_granularity")));
    for horizon in ["0", "31", "x"] {
        let (s, _) = h.call(Method::GET, &format!("/deids/{deid}/forecast?horizon={horizon}"), Some(&citizen), None).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "horizon {horizon}");
    }
    let (s, v) = h.call(Method::GET, &format!("/deids/{deid}/consumption"), Some(&citizen), None).await;
    assert_eq!((s, v["granularity"].as_str()), (StatusCode::OK, Some("day")));
}
