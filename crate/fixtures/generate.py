"""Regenerates the bundled fixtures and prints the oracle values frozen in tests.

    python3 fixtures/generate.py
"""
import json
from pathlib import Path

import numpy as np
import pandas as pd

HERE = Path(__file__).parent
rng = np.random.default_rng(20200322)


def write_wide(df, path, comment):
    with open(path, "w") as f:
        f.write(f"# {comment}\n")
        f.write("unit," + ",".join(d.strftime("%Y-%m-%d") for d in df.columns) + "\n")
        for unit, row in df.iterrows():
            cells = ["" if pd.isna(v) else repr(float(v)).removesuffix(".0") for v in row]
            f.write(unit + "," + ",".join(cells) + "\n")


# cumulative deaths, 10 countries x 120 days
dates = pd.date_range("2020-02-15", periods=120, freq="D")
countries = {
    # unit: (population, final deaths, midpoint day, growth, measure dates)
    "AT": (8_900_000, 700, 62, 0.17, ["2020-03-10", "2020-03-16"]),
    "BE": (11_500_000, 9_700, 65, 0.14, ["2020-03-13", "2020-03-18"]),
    "DE": (83_000_000, 8_900, 68, 0.13, ["2020-03-16", "2020-03-22"]),
    "DK": (5_800_000, 600, 60, 0.16, ["2020-03-11", "2020-03-18"]),
    "ES": (47_000_000, 28_000, 58, 0.18, ["2020-03-14"]),
    "FR": (67_000_000, 29_000, 64, 0.15, ["2020-03-12", "2020-03-17"]),
    "IT": (60_000_000, 33_000, 52, 0.16, ["2020-03-09"]),
    "NL": (17_400_000, 6_000, 63, 0.15, ["2020-03-15", "2020-03-23"]),
    "NO": (5_400_000, 240, 58, 0.17, ["2020-03-12"]),
    "SE": (10_300_000, 4_800, 80, 0.08, []),
}
rows = {}
for unit, (_, final, mid, k, _) in countries.items():
    t = np.arange(120)
    curve = final / (1 + np.exp(-k * (t - mid)))
    daily = np.diff(np.concatenate([[0.0], curve]))
    daily = rng.poisson(np.maximum(daily, 0))
    rows[unit] = np.cumsum(daily).astype(float)
deaths = pd.DataFrame(rows, index=dates).T
# a few unreported days
for unit, day in [("BE", 40), ("FR", 77), ("FR", 78), ("SE", 95), ("NO", 100)]:
    deaths.loc[unit, dates[day]] = np.nan
write_wide(deaths, HERE / "eu_deaths.csv", "cumulative COVID-19 deaths, synthetic")

with open(HERE / "eu_meta.csv", "w") as f:
    f.write("unit,population,region,intervention_date\n")
    for unit, (pop, _, _, _, measures) in countries.items():
        region = "nordic" if unit in ("DK", "NO", "SE") else "continental"
        f.write(f"{unit},{pop},{region},{';'.join(measures)}\n")

# mobility, percent change from baseline, with weekly rhythm
mdates = pd.date_range("2020-02-15", periods=100, freq="D")
weekday = np.array([3.0 if d.dayofweek >= 5 else -1.0 for d in mdates])
mob = {}
steps = {"DE": (28, -45), "DK": (25, -50), "ES": (29, -75), "FR": (30, -70), "IT": (22, -80), "NO": (26, -40)}
for unit, (day, depth) in steps.items():
    base = np.where(np.arange(100) >= day, depth, 0.0)
    mob[unit] = base + weekday + rng.normal(0, 2, 100)
# gradual voluntary reduction: reaches about -30 and stays
t = np.arange(100)
mob["SE"] = -32 / (1 + np.exp(-(t - 35) / 4)) + weekday + rng.normal(0, 2, 100)
# a brief dip that recovers, then nothing
fi = rng.normal(0, 2, 100) + weekday
fi[30:35] -= 40
mob["FI"] = fi
mob["IS"] = -5 + 5 * np.sin(2 * np.pi * t / 7) + rng.normal(0, 1, 100)
mobility = pd.DataFrame(mob, index=mdates).T.round(1)
write_wide(mobility, HERE / "mobility.csv", "mobility, percent change from baseline, synthetic")

# Table-1-shaped panels: 16 states in four climate bands
sdates = pd.date_range("2020-05-01", periods=92, freq="D")
bands = {0: (60.0, 80.0, 2.0), 1: (72.0, 120.0, 3.5), 2: (84.0, 260.0, 4.0), 3: (50.0, 40.0, 1.0)}
states = [f"S{i:02d}" for i in range(16)]
temp, cases, dths, labels = {}, {}, {}, {}
for i, s in enumerate(states):
    band = i % 4
    tmean, cmean, dmean = bands[band]
    labels[s] = band
    season = 6 * np.sin(np.pi * np.arange(92) / 92)
    temp[s] = tmean + season + rng.normal(0, 1.5, 92)
    cases[s] = np.maximum(rng.normal(cmean, cmean * 0.2, 92), 0)
    dths[s] = np.maximum(rng.normal(dmean, dmean * 0.3, 92), 0)
temp = pd.DataFrame(temp, index=sdates).T.round(2)
cases = pd.DataFrame(cases, index=sdates).T.round(3)
dths = pd.DataFrame(dths, index=sdates).T.round(3)
for df, cells in [(cases, [("S03", 40), ("S07", 41)]), (dths, [("S10", 60), ("S10", 61), ("S01", 30)])]:
    for s, d in cells:
        df.loc[s, sdates[d]] = np.nan
write_wide(temp, HERE / "table1" / "temperature.csv", "daily mean temperature, F, synthetic")
write_wide(cases, HERE / "table1" / "cases_pm.csv", "daily cases per million, synthetic")
write_wide(dths, HERE / "table1" / "deaths_pm.csv", "daily deaths per million, synthetic")
with open(HERE / "table1" / "clusters.csv", "w") as f:
    f.write("unit,cluster\n")
    for s in states:
        f.write(f"{s},{labels[s]}\n")

# oracles
window = slice("2020-05-25", "2020-07-31")
oracle = {}
for band in range(4):
    members = [s for s in states if labels[s] == band]
    oracle[band] = {
        name: float(df.loc[members, window].mean(axis=1, skipna=True).mean())
        for name, df in [("temperature", temp), ("cases", cases), ("deaths", dths)]
    }
print("table1", json.dumps(oracle, indent=1))
print("row sums", {u: float(deaths.loc[u].sum(skipna=True)) for u in deaths.index})
