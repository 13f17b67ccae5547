//! Simulated government registries: identities, land parcels, cadastral
//! documents and utility meter bindings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Months, NaiveDate, TimeDelta};
use nourid_core::ids::{CinFormatError, validate_cin_format};
use nourid_core::records::{
    CitizenIdentity, DefectKind, DefectTag, DocumentKind, Location, MeterBinding, Parcel, PropertyDocument,
};
use nourid_core::validation::VALIDITY_YEARS;
use nourid_core::{Cin, ParcelId, PropertyType};
use rand::rngs::ChaCha8Rng;
use rand::seq::IndexedRandom;
use rand::{Rng, RngExt, SeedableRng};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::sim::random_template;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    /// Citizens owning agricultural parcels.
    pub farmers: u32,
    /// Citizens owning commercial parcels.
    pub entrepreneurs: u32,
    /// Citizens owning household parcels.
    pub households: u32,
    pub min_parcels: u32,
    pub max_parcels: u32,
    pub template_dimension: usize,
    /// "Today" for the seeded documents and identity cards.
    pub reference_date: NaiveDate,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            farmers: 100,
            entrepreneurs: 100,
            households: 100,
            min_parcels: 1,
            max_parcels: 3,
            template_dimension: nourid_core::template::DEFAULT_DIMENSION,
            reference_date: NaiveDate::from_ymd_opt(2025, 1, 1).expect("valid date"),
        }
    }
}

impl PopulationConfig {
    pub fn with_counts(farmers: u32, entrepreneurs: u32, households: u32) -> Self {
        PopulationConfig { farmers, entrepreneurs, households, ..Self::default() }
    }

    pub fn check(&self) -> Result<(), RegistryError> {
        if self.min_parcels > self.max_parcels {
            return Err(RegistryError::Config("min_parcels exceeds max_parcels".into()));
        }
        if self.template_dimension == 0 {
            return Err(RegistryError::Config("template_dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("malformed CIN: {}", .0.reason())]
    Format(CinFormatError),
    #[error("not found")]
    NotFound,
    #[error("invalid population config: {0}")]
    Config(String),
    #[error("{file}:{line}: {source}")]
    Parse { file: String, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// All four registries. Records are kept in key order so serialization is
/// byte-stable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Registry {
    identities: BTreeMap<Cin, CitizenIdentity>,
    parcels: BTreeMap<ParcelId, Parcel>,
    documents: BTreeMap<(ParcelId, DocumentKind), PropertyDocument>,
    meters: BTreeMap<ParcelId, MeterBinding>,
    owners: BTreeMap<Cin, BTreeSet<ParcelId>>,
}

const FIRST_NAMES: &[&str] = &[
    "Youssef", "Fatima", "Mohamed", "Khadija", "Omar", "Aicha", "Hamza", "Salma", "Mehdi", "Imane", "Karim", "Nadia",
    "Rachid", "Zineb", "Amine", "Houda", "Said", "Meryem", "Anas", "Latifa",
];
const LAST_NAMES: &[&str] = &[
    "El Amrani", "Benali", "Tazi", "Alaoui", "Berrada", "Chraibi", "Idrissi", "Bennani", "Lahlou", "Fassi", "Ouazzani",
    "Skalli", "Haddad", "Naciri", "Bouzidi", "Zerouali",
];
const LOCALITIES: &[&str] = &[
    "Tanger", "Tetouan", "Fes", "Meknes", "Rabat", "Sale", "Kenitra", "Casablanca", "Settat", "Marrakech", "Safi",
    "Agadir", "Taroudant", "Errachidia", "Ouarzazate", "Oujda", "Nador", "Beni Mellal", "Khouribga", "Laayoune",
];

fn random_cin(rng: &mut impl Rng) -> Cin {
    let letters = rng.random_range(1..=2);
    let digits = rng.random_range(5..=6);
    let mut s = String::with_capacity(8);
    for _ in 0..letters {
        s.push(char::from(b'A' + rng.random_range(0..26u8)));
    }
    for _ in 0..digits {
        s.push(char::from(b'0' + rng.random_range(0..10u8)));
    }
    s.parse().expect("generated CIN matches the pattern")
}

fn date_between(rng: &mut impl Rng, from: NaiveDate, to: NaiveDate) -> NaiveDate {
    let span = (to - from).num_days().max(0);
    from + TimeDelta::days(rng.random_range(0..=span))
}

fn years_before(date: NaiveDate, years: u32) -> NaiveDate {
    date.checked_sub_months(Months::new(12 * years)).expect("in range")
}

fn document_fields(parcel: &Parcel, owner: &CitizenIdentity, kind: DocumentKind, issue_date: NaiveDate) -> BTreeMap<String, String> {
    let mut f = BTreeMap::new();
    let region = parcel.parcel_id.region();
    f.insert("issue_date".into(), issue_date.to_string());
    f.insert("owner_cin".into(), owner.cin.to_string());
    match kind {
        DocumentKind::CadastralPlan => {
            f.insert("issuer".into(), format!("ANCFCC cadastre service, region {region}"));
            f.insert("area_m2".into(), format!("{:.1}", parcel.area_m2));
            f.insert(
                "boundary_summary".into(),
                format!("{} parcel in {}, {:.1} m2, 4 surveyed corners", parcel.property_type.as_str(), parcel.location.locality, parcel.area_m2),
            );
        }
        DocumentKind::OwnershipCertificate => {
            f.insert("issuer".into(), format!("ANCFCC land conservation office, region {region}"));
            f.insert("owner_name".into(), owner.full_name.clone());
            f.insert(
                "owner_attestation".into(),
                format!("{} holds full title to {}", owner.full_name, parcel.parcel_id),
            );
        }
    }
    f
}

/// Deterministic population: same config and seed give identical registries.
pub fn seed_population(config: &PopulationConfig, seed: u64) -> Result<Registry, RegistryError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let today = config.reference_date;
    let mut reg = Registry::default();
    let personas = [
        (config.farmers, PropertyType::Agricultural),
        (config.entrepreneurs, PropertyType::Commercial),
        (config.households, PropertyType::Household),
    ];
    for (count, property_type) in personas {
        for _ in 0..count {
            let cin = loop {
                let c = random_cin(&mut rng);
                if !reg.identities.contains_key(&c) {
                    break c;
                }
            };
            let identity = CitizenIdentity {
                cin: cin.clone(),
                full_name: format!("{} {}", FIRST_NAMES.choose(&mut rng).unwrap(), LAST_NAMES.choose(&mut rng).unwrap()),
                date_of_birth: date_between(&mut rng, years_before(today, 80), years_before(today, 18)),
                reference_template: random_template(config.template_dimension, &mut rng),
                cin_expiry: date_between(&mut rng, today + TimeDelta::days(365), today.checked_add_months(Months::new(12 * VALIDITY_YEARS)).unwrap()),
            };
            let n_parcels = rng.random_range(config.min_parcels..=config.max_parcels);
            for _ in 0..n_parcels {
                let region: u8 = rng.random_range(1..=12);
                let parcel_id = loop {
                    let p = ParcelId::new(region, rng.random_range(0..1_000_000));
                    if !reg.parcels.contains_key(&p) {
                        break p;
                    }
                };
                let area_m2 = match property_type {
                    PropertyType::Household => rng.random_range(60.0..400.0),
                    PropertyType::Commercial => rng.random_range(150.0..5_000.0),
                    PropertyType::Agricultural => rng.random_range(5_000.0..200_000.0),
                };
                let area_m2 = (area_m2 * 10.0f64).round() / 10.0;
                let parcel = Parcel {
                    parcel_id: parcel_id.clone(),
                    owner_cin: cin.clone(),
                    property_type,
                    area_m2,
                    location: Location {
                        region: format!("{region:02}"),
                        locality: LOCALITIES[(usize::from(region) - 1 + rng.random_range(0..9usize)) % LOCALITIES.len()].to_string(),
                    },
                };
                for kind in DocumentKind::ALL {
                    let issued = date_between(&mut rng, years_before(today, VALIDITY_YEARS - 1), today);
                    let doc = PropertyDocument::sealed(parcel_id.clone(), kind, document_fields(&parcel, &identity, kind, issued));
                    reg.documents.insert((parcel_id.clone(), kind), doc);
                }
                let meter_id = format!("SRM-{:010}", rng.random_range(0..10_000_000_000u64));
                reg.meters.insert(parcel_id.clone(), MeterBinding { parcel_id: parcel_id.clone(), meter_id });
                reg.owners.entry(cin.clone()).or_default().insert(parcel_id.clone());
                reg.parcels.insert(parcel_id, parcel);
            }
            reg.identities.insert(cin, identity);
        }
    }
    Ok(reg)
}

/// Injects ground-truth defects into a copy of the registry. Each document is
/// corrupted with probability `defect_rate`; a corrupted document is a
/// re-sealed, self-consistent forgery (invisible to every rule) with
/// probability `1 - detectability`.
pub fn inject_defects(registry: &Registry, defect_rate: f64, detectability: f64, seed: u64) -> Registry {
    assert!((0.0..=1.0).contains(&defect_rate), "defect rate outside [0, 1]");
    assert!((0.0..=1.0).contains(&detectability), "detectability outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = registry.clone();
    let cins: Vec<&Cin> = registry.identities.keys().collect();
    for doc in out.documents.values_mut() {
        if !rng.random_bool(defect_rate) {
            continue;
        }
        let kind = [DefectKind::IntegrityMismatch, DefectKind::ExpiredIssueDate, DefectKind::OwnerMismatch]
            .choose(&mut rng)
            .copied()
            .unwrap();
        let detectable = rng.random_bool(detectability);
        let free_text = match doc.kind {
            DocumentKind::CadastralPlan => "boundary_summary",
            DocumentKind::OwnershipCertificate => "owner_attestation",
        };
        if !detectable {
            // Plausible edit to a free-text field, re-sealed.
            let v = doc.fields.get_mut(free_text).expect("seeded field");
            v.push_str(" (amended)");
            doc.reseal();
        } else {
            match kind {
                DefectKind::IntegrityMismatch => {
                    doc.fields.get_mut(free_text).expect("seeded field").push_str(" (amended)");
                }
                DefectKind::ExpiredIssueDate => {
                    let issued: NaiveDate = doc.fields["issue_date"].parse().expect("seeded date");
                    let stale = years_before(issued, VALIDITY_YEARS) - TimeDelta::days(rng.random_range(1..=730));
                    doc.fields.insert("issue_date".into(), stale.to_string());
                    doc.reseal();
                }
                DefectKind::OwnerMismatch => {
                    let owner = doc.fields["owner_cin"].clone();
                    let other = loop {
                        let c = if cins.len() > 1 { (*cins.choose(&mut rng).unwrap()).clone() } else { random_cin(&mut rng) };
                        if c.as_str() != owner {
                            break c;
                        }
                    };
                    doc.fields.insert("owner_cin".into(), other.to_string());
                    doc.reseal();
                }
            }
        }
        doc.defect = Some(DefectTag { kind, detectable });
    }
    out
}

const FILES: [&str; 4] = ["identities.ndjson", "parcels.ndjson", "documents.ndjson", "meters.ndjson"];

fn write_ndjson<'a, T: Serialize + 'a>(path: &Path, records: impl Iterator<Item = &'a T>) -> Result<(), RegistryError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RegistryError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RegistryError::Parse {
            file: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

impl Registry {
    pub fn from_records(
        identities: Vec<CitizenIdentity>,
        parcels: Vec<Parcel>,
        documents: Vec<PropertyDocument>,
        meters: Vec<MeterBinding>,
    ) -> Self {
        let mut reg = Registry::default();
        for p in &parcels {
            reg.owners.entry(p.owner_cin.clone()).or_default().insert(p.parcel_id.clone());
        }
        reg.identities = identities.into_iter().map(|i| (i.cin.clone(), i)).collect();
        reg.parcels = parcels.into_iter().map(|p| (p.parcel_id.clone(), p)).collect();
        reg.documents = documents.into_iter().map(|d| ((d.parcel_id.clone(), d.kind), d)).collect();
        reg.meters = meters.into_iter().map(|m| (m.parcel_id.clone(), m)).collect();
        reg
    }

    /// Writes one newline-delimited JSON file per registry into `dir`.
    pub fn export(&self, dir: &Path) -> Result<(), RegistryError> {
        fs::create_dir_all(dir)?;
        write_ndjson(&dir.join(FILES[0]), self.identities.values())?;
        write_ndjson(&dir.join(FILES[1]), self.parcels.values())?;
        write_ndjson(&dir.join(FILES[2]), self.documents.values())?;
        write_ndjson(&dir.join(FILES[3]), self.meters.values())?;
        Ok(())
    }

    pub fn import(dir: &Path) -> Result<Self, RegistryError> {
        Ok(Self::from_records(
            read_ndjson(&dir.join(FILES[0]))?,
            read_ndjson(&dir.join(FILES[1]))?,
            read_ndjson(&dir.join(FILES[2]))?,
            read_ndjson(&dir.join(FILES[3]))?,
        ))
    }

    pub fn exists_in(dir: &Path) -> bool {
        FILES.iter().all(|f| dir.join(f).is_file())
    }

    /// Exact lookup. A malformed CIN is a format error, never `NotFound`.
    pub fn lookup_identity(&self, raw_cin: &str) -> Result<&CitizenIdentity, RegistryError> {
        let cin = validate_cin_format(raw_cin).map_err(RegistryError::Format)?;
        self.identities.get(&cin).ok_or(RegistryError::NotFound)
    }

    /// Parcels owned by `raw_cin` in parcel id order; empty when none.
    pub fn list_parcels_by_owner(&self, raw_cin: &str) -> Result<Vec<&Parcel>, RegistryError> {
        let cin = validate_cin_format(raw_cin).map_err(RegistryError::Format)?;
        Ok(self.owners.get(&cin).into_iter().flatten().map(|p| &self.parcels[p]).collect())
    }

    pub fn fetch_document(&self, parcel_id: &ParcelId, kind: DocumentKind) -> Result<&PropertyDocument, RegistryError> {
        self.documents.get(&(parcel_id.clone(), kind)).ok_or(RegistryError::NotFound)
    }

    pub fn parcel(&self, parcel_id: &ParcelId) -> Option<&Parcel> {
        self.parcels.get(parcel_id)
    }

    pub fn meter(&self, parcel_id: &ParcelId) -> Option<&MeterBinding> {
        self.meters.get(parcel_id)
    }

    pub fn identities(&self) -> impl Iterator<Item = &CitizenIdentity> {
        self.identities.values()
    }

    pub fn parcels(&self) -> impl Iterator<Item = &Parcel> {
        self.parcels.values()
    }

    pub fn documents(&self) -> impl Iterator<Item = &PropertyDocument> {
        self.documents.values()
    }

    pub fn meters(&self) -> impl Iterator<Item = &MeterBinding> {
        self.meters.values()
    }

    /// The persona a citizen was seeded as, from their first parcel.
    pub fn persona_of(&self, cin: &Cin) -> Option<PropertyType> {
        let first = self.owners.get(cin)?.iter().next()?;
        Some(self.parcels[first].property_type)
    }
}
