/**
 * Minimal deterministic SVG scaffolding shared by every figure: linear
 * scales, a 1-2-5 tick ladder, framed axes, and a fixed palette keyed by
 * protocol mode. No DOM, no text measurement — layout uses fixed margins so
 * the same input always yields byte-identical output.
 */

export const WIDTH = 760;
export const HEIGHT = 440;
export const MARGIN = { top: 36, right: 24, bottom: 56, left: 76 };

/** Canonical mode ordering; unknown modes sort after these, alphabetically. */
export const MODE_ORDER = [
  "dl",
  "dl-coupled",
  "coupled-no-linking",
  "coupled-with-linking",
];

const MODE_COLOR: Record<string, string> = {
  dl: "#1f77b4",
  "dl-coupled": "#ff7f0e",
  "coupled-no-linking": "#2ca02c",
  "coupled-with-linking": "#d62728",
};

const FALLBACK_COLORS = ["#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

export function modeColor(mode: string, index: number): string {
  return MODE_COLOR[mode] ?? FALLBACK_COLORS[index % FALLBACK_COLORS.length];
}

export function sortModes(modes: Iterable<string>): string[] {
  const unique = [...new Set(modes)];
  return unique.sort((a, b) => {
    const ia = MODE_ORDER.indexOf(a);
    const ib = MODE_ORDER.indexOf(b);
    if (ia >= 0 && ib >= 0) return ia - ib;
    if (ia >= 0) return -1;
    if (ib >= 0) return 1;
    return a < b ? -1 : a > b ? 1 : 0;
  });
}

export type Scale = (value: number) => number;

export function linScale(
  d0: number,
  d1: number,
  r0: number,
  r1: number,
): Scale {
  const span = d1 - d0 || 1;
  return (value) => r0 + ((value - d0) / span) * (r1 - r0);
}

/** Tick positions on the 1-2-5 ladder covering [min, max]. */
export function ticks(min: number, max: number, target = 6): number[] {
  if (max <= min) max = min + 1;
  const rawStep = (max - min) / target;
  const power = Math.pow(10, Math.floor(Math.log10(rawStep)));
  let step = power;
  for (const mult of [1, 2, 5, 10]) {
    step = mult * power;
    if (step >= rawStep) break;
  }
  const out: number[] = [];
  for (let v = Math.ceil(min / step) * step; v <= max + step * 1e-9; v += step) {
    out.push(Math.abs(v) < step * 1e-9 ? 0 : v);
  }
  return out;
}

export function fmtNumber(value: number): string {
  const abs = Math.abs(value);
  if (abs >= 1e9) return `${trim(value / 1e9)}G`;
  if (abs >= 1e6) return `${trim(value / 1e6)}M`;
  if (abs >= 1e3) return `${trim(value / 1e3)}K`;
  return trim(value);
}

function trim(value: number): string {
  return parseFloat(value.toPrecision(4)).toString();
}

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const fmt = (v: number) => +v.toFixed(2);

export class Svg {
  private parts: string[] = [];

  constructor(
    readonly width = WIDTH,
    readonly height = HEIGHT,
  ) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" ` +
        `height="${height}" viewBox="0 0 ${width} ${height}" ` +
        `font-family="sans-serif" font-size="12">`,
      `<rect width="${width}" height="${height}" fill="white"/>`,
    );
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1) {
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" ` +
        `stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  rect(x: number, y: number, w: number, h: number, fill: string) {
    this.parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" ` +
        `height="${fmt(h)}" fill="${fill}"/>`,
    );
  }

  circle(cx: number, cy: number, r: number, fill: string) {
    this.parts.push(
      `<circle cx="${fmt(cx)}" cy="${fmt(cy)}" r="${r}" fill="${fill}"/>`,
    );
  }

  polyline(points: Array<[number, number]>, stroke: string, opts: {
    width?: number;
    dash?: string;
    opacity?: number;
  } = {}) {
    const path = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
    const dash = opts.dash ? ` stroke-dasharray="${opts.dash}"` : "";
    const opacity = opts.opacity !== undefined
      ? ` stroke-opacity="${opts.opacity}"` : "";
    this.parts.push(
      `<polyline points="${path}" fill="none" stroke="${stroke}" ` +
        `stroke-width="${opts.width ?? 1.5}"${dash}${opacity}/>`,
    );
  }

  text(x: number, y: number, content: string, opts: {
    anchor?: string;
    rotate?: number;
    fill?: string;
    size?: number;
  } = {}) {
    const anchor = opts.anchor ? ` text-anchor="${opts.anchor}"` : "";
    const transform = opts.rotate
      ? ` transform="rotate(${opts.rotate} ${fmt(x)} ${fmt(y)})"` : "";
    const fill = opts.fill ? ` fill="${opts.fill}"` : "";
    const size = opts.size ? ` font-size="${opts.size}"` : "";
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}"${anchor}${transform}${fill}${size}>` +
        `${esc(content)}</text>`,
    );
  }

  toString(): string {
    return this.parts.join("\n") + "\n</svg>\n";
  }
}

export interface Frame {
  svg: Svg;
  x: Scale;
  y: Scale;
  plotLeft: number;
  plotRight: number;
  plotTop: number;
  plotBottom: number;
}

/** Axes, grid lines, tick labels, axis titles, and the figure title. */
export function frame(opts: {
  title: string;
  xLabel: string;
  yLabel: string;
  xDomain: [number, number];
  yDomain: [number, number];
  xTicks?: number[];
  xTickLabels?: string[];
}): Frame {
  const svg = new Svg();
  const left = MARGIN.left;
  const right = WIDTH - MARGIN.right;
  const top = MARGIN.top;
  const bottom = HEIGHT - MARGIN.bottom;
  const x = linScale(opts.xDomain[0], opts.xDomain[1], left, right);
  const y = linScale(opts.yDomain[0], opts.yDomain[1], bottom, top);

  svg.text(WIDTH / 2, 20, opts.title, { anchor: "middle", size: 14 });
  const xTicks = opts.xTicks ?? ticks(opts.xDomain[0], opts.xDomain[1]);
  xTicks.forEach((tick, i) => {
    const px = x(tick);
    svg.line(px, bottom, px, bottom + 4, "#444");
    svg.text(px, bottom + 18, opts.xTickLabels?.[i] ?? fmtNumber(tick), {
      anchor: "middle",
      fill: "#333",
    });
  });
  for (const tick of ticks(opts.yDomain[0], opts.yDomain[1])) {
    const py = y(tick);
    svg.line(left, py, right, py, "#ddd");
    svg.line(left - 4, py, left, py, "#444");
    svg.text(left - 8, py + 4, fmtNumber(tick), {
      anchor: "end",
      fill: "#333",
    });
  }
  svg.line(left, bottom, right, bottom, "#444");
  svg.line(left, top, left, bottom, "#444");
  svg.text(WIDTH / 2, HEIGHT - 14, opts.xLabel, { anchor: "middle" });
  svg.text(18, HEIGHT / 2, opts.yLabel, {
    anchor: "middle",
    rotate: -90,
  });
  return { svg, x, y, plotLeft: left, plotRight: right, plotTop: top,
           plotBottom: bottom };
}

export function legend(
  fr: Frame,
  entries: Array<{ label: string; color: string; dash?: string }>,
) {
  let ly = fr.plotTop + 6;
  for (const entry of entries) {
    const lx = fr.plotLeft + 10;
    if (entry.dash !== undefined) {
      fr.svg.polyline(
        [[lx, ly], [lx + 22, ly]],
        entry.color,
        { width: 2, dash: entry.dash || undefined },
      );
    } else {
      fr.svg.rect(lx, ly - 8, 12, 12, entry.color);
    }
    fr.svg.text(lx + 28, ly + 4, entry.label, { fill: "#333" });
    ly += 18;
  }
}
