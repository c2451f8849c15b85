#!/usr/bin/env python3
"""Regenerate the bundled demo corpus under data/demo/tables.

The output is deterministic; rerunning it reproduces the committed CSVs.
"""

import csv
import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent / "data" / "demo"
TABLES = ROOT / "tables"

MONTHS = ["March", "July", "November"]

PROPERTY = {
    ("Shanghai", "Pudong"): [
        "Sunrise Garden Phase Two Residences",
        "Golden Bay International Plaza Tower A",
        "Riverside Lantern Court",
        "Pearl Harbor View Apartments",
    ],
    ("Shanghai", "Minhang"): [
        "Maple Grove Villas East Block",
        "Starlight Terrace Phase One",
        "Jade Lake Mansion",
        "Harmony Park Residences",
    ],
    ("Beijing", "Chaoyang"): [
        "Imperial Orchard Towers North Wing",
        "Silver Birch Gardens",
        "Summit Crest Apartments",
        "Lotus Pond Courtyard Homes",
    ],
    ("Beijing", "Haidian"): [
        "Scholar Hill Residences Phase Three",
        "Willow Creek Gardens",
        "Academy Square Lofts",
        "Northern Pine Estate",
    ],
    ("Hangzhou", "Xihu"): [
        "West Lake Blossom Villas",
        "Tea Garden Hillside Homes",
        "Crystal Spring Residences",
        "Misty Bridge Mansion",
    ],
}

LAND = {
    "Shanghai": ["Pudong", "Minhang", "Jiading"],
    "Beijing": ["Chaoyang", "Haidian", "Tongzhou"],
    "Hangzhou": ["Xihu", "Binjiang", "Xiaoshan"],
    "Nanjing": ["Gulou", "Jiangning", "Qixia"],
}

BIDDERS = [
    "Vanke Real Estate Development Co. Ltd.",
    "Greenland Holdings Group Co. Ltd.",
    "Poly Developments Holdings Group",
    "Longfor Properties Co. Ltd.",
    "Sunac Urban Renewal Holdings Ltd.",
    "Yuexiu Property Company Ltd.",
]

ENTERPRISES = [
    "Evergreen Holdings Group Co. Ltd.",
    "ABC Technology Inc.",
    "Bright Future Construction Group",
    "Blue Ocean Logistics Holdings",
    "Red Maple Financial Services Ltd.",
    "Summit Peak Engineering Co. Ltd.",
    "Golden Harvest Agricultural Group",
    "Starbridge Urban Development Corp.",
]

PROPERTY_COLUMNS = [
    ("project_name", "text"),
    ("city", "text"),
    ("district", "text"),
    ("year", "integer"),
    ("month", "text"),
    ("avg_price", "decimal"),
    ("units_sold", "integer"),
    ("green_coverage_ratio", "decimal"),
    ("plot_ratio", "decimal"),
]

LAND_COLUMNS = [
    ("parcel_name", "text"),
    ("city", "text"),
    ("district", "text"),
    ("year", "integer"),
    ("month", "text"),
    ("land_use", "text"),
    ("area_sqm", "decimal"),
    ("starting_price", "decimal"),
    ("deal_price", "decimal"),
    ("premium_rate", "decimal"),
    ("winning_bidder", "text"),
    ("auction_date", "date"),
]

FINANCE_COLUMNS = [
    ("enterprise_name", "text"),
    ("year", "integer"),
    ("revenue", "decimal"),
    ("net_profit", "decimal"),
    ("total_assets", "decimal"),
    ("debt_ratio", "decimal"),
    ("risk_level", "text"),
]

MONTH_NUM = {"March": 3, "July": 7, "November": 11}


def write_csv(name, columns, rows):
    with open(TABLES / name, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c for c, _ in columns])
        w.writerows(rows)


def main():
    rng = random.Random(20240611)
    TABLES.mkdir(parents=True, exist_ok=True)
    domains = []

    tables = []
    for (city, district), projects in PROPERTY.items():
        rows = []
        for p in projects:
            green = round(rng.uniform(0.25, 0.45), 2)
            plot = round(rng.uniform(1.8, 3.2), 1)
            base = rng.randint(38000, 92000)
            for year in (2021, 2022):
                for month in MONTHS:
                    price = base + rng.randint(-4000, 6000)
                    units = rng.randint(12, 240)
                    rows.append([p, city, district, year, month, price, units, green, plot])
        fname = f"property_{city.lower()}_{district.lower()}.csv"
        write_csv(fname, PROPERTY_COLUMNS, rows)
        tables.append({
            "caption": f"{city} {district} Property Sales",
            "file": f"tables/{fname}",
            "columns": [{"name": n, "kind": k} for n, k in PROPERTY_COLUMNS],
            "required_scope_slots": ["City", "District"],
        })
    domains.append({"name": "property", "tables": tables})

    tables = []
    for city, districts in LAND.items():
        rows = []
        n = 0
        for year in (2021, 2022):
            for month in MONTHS:
                district = districts[n % len(districts)]
                n += 1
                use = rng.choice(["residential", "commercial", "industrial"])
                area = round(rng.uniform(8000, 90000), 1)
                start = rng.randint(200, 4000) * 100000
                premium = round(rng.uniform(0.0, 0.45), 3)
                deal = int(start * (1 + premium))
                bidder = rng.choice(BIDDERS)
                day = rng.randint(1, 28)
                parcel = f"{city[:2].upper()}-{year}-{n:02d}"
                date = f"{year}-{MONTH_NUM[month]:02d}-{day:02d}"
                rows.append([parcel, city, district, year, month, use, area, start, deal,
                             premium, bidder, date])
        fname = f"land_{city.lower()}.csv"
        write_csv(fname, LAND_COLUMNS, rows)
        tables.append({
            "caption": f"{city} Land Auctions",
            "file": f"tables/{fname}",
            "columns": [{"name": n, "kind": k} for n, k in LAND_COLUMNS],
            "required_scope_slots": ["City"],
        })
    domains.append({"name": "land_auction", "tables": tables})

    tables = []
    for year in (2020, 2021, 2022):
        rows = []
        for e in ENTERPRISES:
            revenue = round(rng.uniform(5e8, 9e9), -5)
            profit = round(revenue * rng.uniform(-0.05, 0.18), -4)
            assets = round(revenue * rng.uniform(1.2, 3.5), -5)
            debt = round(rng.uniform(0.3, 0.9), 3)
            risk = "high" if debt > 0.75 else ("medium" if debt > 0.55 else "low")
            rows.append([e, year, revenue, profit, assets, debt, risk])
        fname = f"finance_{year}.csv"
        write_csv(fname, FINANCE_COLUMNS, rows)
        tables.append({
            "caption": f"{year} Enterprise Finance",
            "file": f"tables/{fname}",
            "columns": [{"name": n, "kind": k} for n, k in FINANCE_COLUMNS],
            "required_scope_slots": ["Year"],
        })
    domains.append({"name": "finance", "tables": tables})

    manifest = {"version": 1, "slot_registry": "slots.json", "domains": domains}
    with open(ROOT / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main()
