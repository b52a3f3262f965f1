use std::io::{Read, Write};

use super::{ModelError, FACTORS};
use crate::calendar::{MonthRange, YearMonth};
use crate::cluster::ClusterAssignment;
use crate::ingest::{fmt_f64, ObservationRecord};
use crate::special::ln_choose;

/// Model-ready arrays, one entry per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub n: Vec<f64>,
    pub y: Vec<f64>,
    pub cluster: Vec<usize>,
    /// Month index relative to `first_month`.
    pub month: Vec<usize>,
    pub covid: Vec<bool>,
    /// Centered (optionally scaled) predictors: weather, nas, security, late.
    pub x: Vec<[f64; 4]>,
    pub grand_means: [f64; 4],
    /// Divisors applied after centering; all ones unless predictors are standardized.
    pub scales: [f64; 4],
    pub n_clusters: usize,
    pub n_months: usize,
    /// Study month index of relative month 0.
    pub first_month: usize,
    /// COVID membership per relative month.
    pub covid_months: Vec<bool>,
    pub(crate) log_choose: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct DesignOptions {
    pub covid_window: Option<MonthRange>,
    /// Center on these means instead of the input records' own grand means.
    pub grand_means: Option<[f64; 4]>,
    pub standardize: bool,
    /// Inclusive study-month span; defaults to the records' first and last month.
    pub month_span: Option<(usize, usize)>,
}

impl DesignMatrix {
    /// Assembles a design from per-observation arrays, checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n: Vec<f64>,
        y: Vec<f64>,
        cluster: Vec<usize>,
        month: Vec<usize>,
        x: Vec<[f64; 4]>,
        grand_means: [f64; 4],
        scales: [f64; 4],
        n_clusters: usize,
        first_month: usize,
        covid_months: Vec<bool>,
    ) -> Result<Self, ModelError> {
        let len = n.len();
        if [y.len(), cluster.len(), month.len(), x.len()].iter().any(|&l| l != len) {
            return Err(ModelError::Design("per-observation arrays differ in length".into()));
        }
        let n_months = covid_months.len();
        for i in 0..len {
            if !(n[i] > 0.0 && y[i] >= 0.0 && y[i] <= n[i]) {
                return Err(ModelError::Design(format!(
                    "observation {i}: need 0 <= y <= n and n > 0, got y={} n={}",
                    y[i], n[i]
                )));
            }
            if cluster[i] >= n_clusters {
                return Err(ModelError::Design(format!("observation {i}: cluster {} >= J", cluster[i])));
            }
            if month[i] >= n_months {
                return Err(ModelError::Design(format!("observation {i}: month {} >= T", month[i])));
            }
            if x[i].iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Design(format!("observation {i}: non-finite predictor")));
            }
        }
        let covid = month.iter().map(|&m| covid_months[m]).collect();
        let log_choose = n.iter().zip(&y).map(|(&n, &y)| ln_choose(n, y)).collect();
        Ok(Self {
            n,
            y,
            cluster,
            month,
            covid,
            x,
            grand_means,
            scales,
            n_clusters,
            n_months,
            first_month,
            covid_months,
            log_choose,
        })
    }

    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    /// Design with no observations; its posterior is the prior.
    pub fn empty(n_clusters: usize, covid_months: Vec<bool>) -> Self {
        Self::from_parts(
            Vec::new(),
            Vec::new(),
            Vec::new(),
            Vec::new(),
            Vec::new(),
            [0.0; 4],
            [1.0; 4],
            n_clusters,
            0,
            covid_months,
        )
        .expect("empty design is valid")
    }

    /// Column sums of X, zero up to rounding for self-centered designs.
    pub fn column_sums(&self) -> [f64; 4] {
        let mut s = [0.0; 4];
        for row in &self.x {
            for k in 0..4 {
                s[k] += row[k];
            }
        }
        s
    }

    /// Writes the design as CSV preceded by `# key=value` metadata lines.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<(), ModelError> {
        let io = |e: std::io::Error| ModelError::Io(e.to_string());
        writeln!(writer, "# clusters={}", self.n_clusters).map_err(io)?;
        writeln!(writer, "# months={}", self.n_months).map_err(io)?;
        writeln!(writer, "# first_month={}", self.first_month).map_err(io)?;
        let covid: Vec<String> = self
            .covid_months
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(t, _)| t.to_string())
            .collect();
        writeln!(writer, "# covid_months={}", covid.join(";")).map_err(io)?;
        let means: Vec<String> = self.grand_means.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(writer, "# grand_means={}", means.join(";")).map_err(io)?;
        let scales: Vec<String> = self.scales.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(writer, "# scales={}", scales.join(";")).map_err(io)?;

        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["n", "y", "cluster_idx", "month_idx", "covid_flag"].into_iter().map(String::from).collect::<Vec<_>>();
        header.extend(FACTORS.iter().map(|f| format!("x_{f}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![
                fmt_f64(self.n[i]),
                fmt_f64(self.y[i]),
                self.cluster[i].to_string(),
                self.month[i].to_string(),
                (self.covid[i] as u8).to_string(),
            ];
            row.extend(self.x[i].iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut reader: R) -> Result<Self, ModelError> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| ModelError::Io(e.to_string()))?;
        let mut meta = std::collections::HashMap::new();
        let mut body_start = 0;
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else { break };
            body_start += line.len() + 1;
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |key: &str| -> Result<&String, ModelError> {
            meta.get(key)
                .ok_or_else(|| ModelError::Design(format!("design file lacks '# {key}=' metadata")))
        };
        let parse_usize = |key: &str| -> Result<usize, ModelError> {
            get(key)?
                .parse()
                .map_err(|_| ModelError::Design(format!("bad {key} metadata")))
        };
        let parse_four = |key: &str| -> Result<[f64; 4], ModelError> {
            let v: Vec<f64> = get(key)?
                .split(';')
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| ModelError::Design(format!("bad {key} metadata")))?;
            v.try_into()
                .map_err(|_| ModelError::Design(format!("{key} needs 4 values")))
        };
        let n_clusters = parse_usize("clusters")?;
        let n_months = parse_usize("months")?;
        let first_month = parse_usize("first_month")?;
        let mut covid_months = vec![false; n_months];
        for t in get("covid_months")?.split(';').filter(|s| !s.is_empty()) {
            let t: usize = t
                .parse()
                .map_err(|_| ModelError::Design("bad covid_months metadata".into()))?;
            *covid_months
                .get_mut(t)
                .ok_or_else(|| ModelError::Design(format!("covid month {t} >= T")))? = true;
        }
        let grand_means = parse_four("grand_means")?;
        let scales = parse_four("scales")?;

        let body = text.get(body_start.min(text.len())..).unwrap_or("");
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let (mut n, mut y, mut cluster, mut month, mut x) = (vec![], vec![], vec![], vec![], vec![]);
        for row in rdr.records() {
            let row = row?;
            let f = |i: usize| -> Result<f64, ModelError> {
                row.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| ModelError::Design(format!("bad numeric cell in column {i}")))
            };
            n.push(f(0)?);
            y.push(f(1)?);
            cluster.push(f(2)? as usize);
            month.push(f(3)? as usize);
            x.push([f(5)?, f(6)?, f(7)?, f(8)?]);
        }
        Self::from_parts(n, y, cluster, month, x, grand_means, scales, n_clusters, first_month, covid_months)
    }
}

/// Grand means of the four exogenous counts over `records`.
pub fn grand_means(records: &[ObservationRecord]) -> [f64; 4] {
    let mut sums = [0.0; 4];
    for r in records {
        for (s, c) in sums.iter_mut().zip(r.exogenous_counts()) {
            *s += c;
        }
    }
    let n = records.len().max(1) as f64;
    sums.map(|s| s / n)
}

/// Builds the design: cluster index from the assignment, relative month index,
/// COVID flag, and predictors centered on the grand means. Carrier counts are
/// the reference category and never enter X.
pub fn build_design(
    records: &[ObservationRecord],
    assignment: &ClusterAssignment,
    options: &DesignOptions,
) -> Result<DesignMatrix, ModelError> {
    if records.is_empty() && options.month_span.is_none() {
        return Err(ModelError::Design("no records and no month span".into()));
    }
    let (first, last) = match options.month_span {
        Some(span) => span,
        None => {
            let months = records.iter().map(|r| r.month_index());
            (months.clone().min().unwrap(), months.max().unwrap())
        }
    };
    if first > last {
        return Err(ModelError::Design(format!("empty month span {first}..={last}")));
    }
    let covid_months: Vec<bool> = (first..=last)
        .map(|t| options.covid_window.is_some_and(|w| w.contains_index(t)))
        .collect();

    let means = options.grand_means.unwrap_or_else(|| grand_means(records));
    let centered: Vec<[f64; 4]> = records
        .iter()
        .map(|r| {
            let c = r.exogenous_counts();
            [c[0] - means[0], c[1] - means[1], c[2] - means[2], c[3] - means[3]]
        })
        .collect();
    let mut scales = [1.0; 4];
    if options.standardize {
        for (k, scale) in scales.iter_mut().enumerate() {
            let var = centered.iter().map(|x| x[k] * x[k]).sum::<f64>() / records.len().max(1) as f64;
            if var > 0.0 {
                *scale = var.sqrt();
            }
        }
    }
    let x = centered
        .into_iter()
        .map(|c| [c[0] / scales[0], c[1] / scales[1], c[2] / scales[2], c[3] / scales[3]])
        .collect();

    let mut cluster = Vec::with_capacity(records.len());
    let mut month = Vec::with_capacity(records.len());
    for r in records {
        let label = assignment
            .label(&r.airport)
            .ok_or_else(|| ModelError::UnknownAirport(r.airport.clone()))?;
        cluster.push(label);
        let t = r.month_index();
        if t < first || t > last {
            return Err(ModelError::Design(format!(
                "record dated {} outside month span {}..{}",
                r.year_month(),
                YearMonth::from_index(first),
                YearMonth::from_index(last)
            )));
        }
        month.push(t - first);
    }
    DesignMatrix::from_parts(
        records.iter().map(|r| r.arr_flights).collect(),
        records.iter().map(|r| r.arr_del15).collect(),
        cluster,
        month,
        x,
        means,
        scales,
        assignment.k,
        first,
        covid_months,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rec(airport: &str, ym: (i32, u32), security: f64) -> ObservationRecord {
        ObservationRecord {
            year: ym.0,
            month: ym.1,
            airport: airport.into(),
            carrier: "AA".into(),
            arr_flights: 100.0,
            arr_del15: 10.0,
            carrier_ct: 10.0 - security,
            weather_ct: 0.0,
            nas_ct: 0.0,
            security_ct: security,
            late_aircraft_ct: 0.0,
        }
    }

    fn assignment() -> ClusterAssignment {
        let labels: BTreeMap<String, usize> = [("ORD".to_string(), 0), ("SEA".to_string(), 1)].into();
        ClusterAssignment::new(2, labels, Vec::new(), f64::NAN)
    }

    #[test]
    fn centers_security_counts() {
        let recs = vec![rec("ORD", (2019, 1), 0.0), rec("SEA", (2019, 2), 1.0), rec("ORD", (2019, 3), 2.0)];
        let d = build_design(&recs, &assignment(), &DesignOptions::default()).unwrap();
        let xs: Vec<f64> = d.x.iter().map(|x| x[2]).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        assert_eq!(d.grand_means[2], 1.0);
        assert_eq!(d.n_months, 3);
        assert_eq!(d.month, vec![0, 1, 2]);
        assert_eq!(d.cluster, vec![0, 1, 0]);
    }

    #[test]
    fn carrier_counts_never_enter_predictors() {
        let mut a = rec("ORD", (2019, 1), 1.0);
        let mut b = rec("ORD", (2019, 2), 1.0);
        a.carrier_ct = 0.0;
        b.carrier_ct = 9.0;
        let d = build_design(&[a, b], &assignment(), &DesignOptions::default()).unwrap();
        assert!(d.x.iter().all(|row| row.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn covid_flags() {
        let recs = vec![rec("ORD", (2021, 6), 0.0), rec("ORD", (2019, 12), 0.0)];
        let opts = DesignOptions {
            covid_window: Some(MonthRange::covid_default()),
            ..Default::default()
        };
        let d = build_design(&recs, &assignment(), &opts).unwrap();
        assert_eq!(d.covid, vec![true, false]);
        assert_eq!(d.first_month, 119);
    }

    #[test]
    fn unknown_airport_is_named() {
        let recs = vec![rec("JFK", (2019, 1), 0.0)];
        match build_design(&recs, &assignment(), &DesignOptions::default()) {
            Err(ModelError::UnknownAirport(a)) => assert_eq!(a, "JFK"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reuses_supplied_grand_means() {
        let recs = vec![rec("ORD", (2019, 1), 0.0), rec("ORD", (2019, 2), 2.0)];
        let opts = DesignOptions {
            grand_means: Some([0.0, 0.0, 0.5, 0.0]),
            ..Default::default()
        };
        let d = build_design(&recs, &assignment(), &opts).unwrap();
        assert_eq!(d.x[0][2], -0.5);
        assert_eq!(d.x[1][2], 1.5);
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![rec("ORD", (2021, 6), 0.25), rec("SEA", (2019, 12), 1.0), rec("SEA", (2020, 1), 3.0)];
        let opts = DesignOptions {
            covid_window: Some(MonthRange::covid_default()),
            standardize: true,
            ..Default::default()
        };
        let d = build_design(&recs, &assignment(), &opts).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DesignMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }
}
