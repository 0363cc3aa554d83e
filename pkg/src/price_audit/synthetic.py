from __future__ import annotations

from dataclasses import dataclass

from .catalog import Catalog
from .types import Product

# (category, brand, product noun, spec attribute, unit)
FAMILIES: tuple[tuple[str, str, str, str, str], ...] = (
    ("desk lamps", "Lumina", "Desk Lamp", "brightness", "lm"),
    ("kettles", "Boilwell", "Electric Kettle", "power", "W"),
    ("headphones", "Sonique", "Wireless Headphones", "battery life", "h"),
    ("blenders", "Vortexa", "Countertop Blender", "power", "W"),
    ("backpacks", "Trailpak", "Hiking Backpack", "capacity", "L"),
    ("monitors", "Pixelon", "Office Monitor", "refresh rate", "Hz"),
    ("vacuums", "Dustra", "Cordless Vacuum", "suction", "Pa"),
    ("webcams", "Clearcam", "Streaming Webcam", "resolution", "p"),
    ("water bottles", "Hydrona", "Insulated Bottle", "capacity", "ml"),
    ("power banks", "Voltique", "Portable Charger", "capacity", "mAh"),
)
VARIANTS = ("Classic", "Plus", "Pro", "Max", "Ultra")
NORMALS_PER_FAMILY = len(VARIANTS)
PLANTED_VARIANT = "Prime"


def planted_multiplier(family: int) -> float:
    return 2.2 + 0.25 * family


def _family_products(family: int) -> list[Product]:
    category, brand, noun, spec, unit = FAMILIES[family]
    base = 20.0 + 15.0 * family
    out = []
    for i, variant in enumerate(VARIANTS):
        out.append(
            Product(
                id=f"f{family:02d}-n{i}",
                title=f"{brand} {noun} {variant}",
                category=category,
                price=round(base * (1 + 0.05 * i), 2),
                attributes={"brand": brand, "quantity": "1", spec: f"{100 + 10 * i} {unit}"},
            )
        )
    top_price = max(p.price for p in out)
    out.append(
        Product(
            id=f"f{family:02d}-p",
            title=f"{brand} {noun} {PLANTED_VARIANT}",
            category=category,
            price=round(planted_multiplier(family) * top_price, 2),
            # Spec of the weakest normal product: every sibling is equal or better.
            attributes={"brand": brand, "quantity": "1", spec: f"100 {unit}"},
        )
    )
    return out


def planted_outlier_catalog() -> Catalog:
    """60 products: per family five consistently priced items and one overpriced plant."""
    products: list[Product] = []
    for family in range(len(FAMILIES)):
        products.extend(_family_products(family))
    return Catalog(products)


def planted_ids(catalog: Catalog) -> list[str]:
    return [pid for pid in catalog.ids if pid.endswith("-p")]


def normal_ids(catalog: Catalog) -> list[str]:
    return [pid for pid in catalog.ids if not pid.endswith("-p")]


def synthetic_label_rows(catalog: Catalog) -> list[dict[str, str]]:
    """Label rows for the planted catalog: silver = plants + cheapest normals, one_sided = other normals."""
    rows = []
    for pid in planted_ids(catalog):
        rows.append({"product_id": pid, "set": "silver", "label": "outlier"})
    for pid in normal_ids(catalog):
        if pid.endswith("-n0"):
            rows.append({"product_id": pid, "set": "silver", "label": "not_outlier"})
        else:
            rows.append({"product_id": pid, "set": "one_sided", "label": "not_outlier"})
    for pid in catalog.ids:
        rows.append({"product_id": pid, "set": "unannotated", "label": "unlabeled"})
    return rows


@dataclass(frozen=True)
class MouseFixture:
    catalog: Catalog
    target_id: str


def _mouse(pid: str, title: str, price: float, dpi: int) -> Product:
    return Product(
        id=pid,
        title=title,
        category="computer mice",
        price=price,
        attributes={"brand": title.split()[0], "quantity": "1", "dpi": str(dpi)},
    )


def veto_mouse_fixture() -> MouseFixture:
    """$150 mouse with one lower-dpi sibling at $180: a worse, pricier neighbor."""
    return MouseFixture(
        Catalog(
            [
                _mouse("mouse-target", "Swift Wireless Mouse", 150.0, 1600),
                _mouse("mouse-basic", "Swift Wireless Mouse Basic", 180.0, 800),
            ]
        ),
        "mouse-target",
    )


def voting_mouse_fixture() -> MouseFixture:
    """$150 mouse; three better mice at $100 and two worse mice at $200."""
    return MouseFixture(
        Catalog(
            [
                _mouse("glide-target", "Glide Gaming Mouse", 150.0, 1600),
                _mouse("glide-pro", "Glide Gaming Mouse Pro", 100.0, 3200),
                _mouse("glide-elite", "Glide Gaming Mouse Elite", 100.0, 3200),
                _mouse("glide-max", "Glide Gaming Mouse Max", 100.0, 3200),
                _mouse("glide-lite", "Glide Gaming Mouse Lite", 200.0, 800),
                _mouse("glide-mini", "Glide Gaming Mouse Mini", 200.0, 800),
            ]
        ),
        "glide-target",
    )


def singleton_fixture() -> MouseFixture:
    return MouseFixture(Catalog([_mouse("lonely", "Swift Wireless Mouse", 150.0, 1600)]), "lonely")
