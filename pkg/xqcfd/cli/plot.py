# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Learning curves as a plain SVG document: IQM line and confidence band per variant."""

import xml.etree.ElementTree as ET
from collections import defaultdict
from pathlib import Path

from xqcfd.exceptions import EmptyDatasetError
from xqcfd.utils import throw

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 60, "right": 150, "top": 20, "bottom": 50}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _fmt(value: float) -> str:
	return "{0:.2f}".format(value)


class _Frame:
	"""Maps (step, success rate) to SVG coordinates; rates are clamped to [0, 1]."""

	def __init__(self, steps):
		self.x_min = min(min(steps), 0)
		self.x_max = max(steps)
		if self.x_max == self.x_min:
			self.x_max = self.x_min + 1
		self.left, self.top = MARGIN["left"], MARGIN["top"]
		self.width = WIDTH - MARGIN["left"] - MARGIN["right"]
		self.height = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

	def x(self, step) -> float:
		return self.left + (step - self.x_min) / (self.x_max - self.x_min) * self.width

	def y(self, rate) -> float:
		return self.top + (1.0 - min(max(rate, 0.0), 1.0)) * self.height


def render_svg(rows) -> str:
	"""SVG text for aggregate rows (`step, variant, iqm, ci_lo, ci_hi`)."""
	curves = defaultdict(list)
	for row in rows:
		curves[row["variant"]].append(row)
	if not curves:
		throw("Nothing to plot", EmptyDatasetError)
	frame = _Frame([row["step"] for row in rows])

	svg = ET.Element(
		"svg",
		{"xmlns": "http://www.w3.org/2000/svg", "width": str(WIDTH), "height": str(HEIGHT), "viewBox": f"0 0 {WIDTH} {HEIGHT}"},
	)
	bottom, right = frame.y(0.0), frame.left + frame.width
	ET.SubElement(svg, "line", {"x1": _fmt(frame.left), "y1": _fmt(bottom), "x2": _fmt(right), "y2": _fmt(bottom), "stroke": "black"})
	ET.SubElement(svg, "line", {"x1": _fmt(frame.left), "y1": _fmt(frame.top), "x2": _fmt(frame.left), "y2": _fmt(bottom), "stroke": "black"})
	for rate in (0.0, 0.5, 1.0):
		label = ET.SubElement(svg, "text", {"x": _fmt(frame.left - 8), "y": _fmt(frame.y(rate) + 4), "text-anchor": "end", "font-size": "11"})
		label.text = "{0:g}".format(rate)
	for step in (frame.x_min, frame.x_max):
		label = ET.SubElement(svg, "text", {"x": _fmt(frame.x(step)), "y": _fmt(bottom + 16), "text-anchor": "middle", "font-size": "11"})
		label.text = str(step)
	caption = ET.SubElement(svg, "text", {"x": _fmt(frame.left + frame.width / 2), "y": _fmt(HEIGHT - 10), "text-anchor": "middle", "font-size": "12"})
	caption.text = "environment steps"

	# BC evaluation sits left of this line
	zero = frame.x(0)
	ET.SubElement(
		svg,
		"line",
		{"x1": _fmt(zero), "y1": _fmt(frame.top), "x2": _fmt(zero), "y2": _fmt(bottom), "stroke": "gray", "stroke-dasharray": "4 4"},
	)

	for i, (variant, curve) in enumerate(sorted(curves.items())):
		color = PALETTE[i % len(PALETTE)]
		curve = sorted(curve, key=lambda row: row["step"])
		upper = [f"{_fmt(frame.x(row['step']))},{_fmt(frame.y(row['ci_hi']))}" for row in curve]
		lower = [f"{_fmt(frame.x(row['step']))},{_fmt(frame.y(row['ci_lo']))}" for row in reversed(curve)]
		ET.SubElement(svg, "path", {"d": "M " + " L ".join(upper + lower) + " Z", "fill": color, "fill-opacity": "0.2", "stroke": "none"})
		points = " ".join(f"{_fmt(frame.x(row['step']))},{_fmt(frame.y(row['iqm']))}" for row in curve)
		ET.SubElement(svg, "polyline", {"points": points, "fill": "none", "stroke": color, "stroke-width": "2"})
		legend = ET.SubElement(svg, "text", {"x": _fmt(right + 12), "y": _fmt(frame.top + 16 * (i + 1)), "fill": color, "font-size": "12"})
		legend.text = variant

	return ET.tostring(svg, encoding="unicode") + "\n"


def plot_aggregate(rows, out) -> Path:
	out = Path(out)
	out.parent.mkdir(parents=True, exist_ok=True)
	out.write_text(render_svg(rows), encoding="utf-8")
	return out
