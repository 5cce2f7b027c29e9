/** Tiny SVG document builder with linear/log scales. No dependencies. */

export interface Margin {
  top: number;
  right: number;
  bottom: number;
  left: number;
}

export const DEFAULT_MARGIN: Margin = { top: 36, right: 20, bottom: 44, left: 56 };

export class LinearScale {
  constructor(
    readonly d0: number,
    readonly d1: number,
    readonly r0: number,
    readonly r1: number,
  ) {}

  map(v: number): number {
    const t = (v - this.d0) / (this.d1 - this.d0 || 1);
    return this.r0 + t * (this.r1 - this.r0);
  }

  ticks(n = 5): number[] {
    const span = this.d1 - this.d0;
    if (span <= 0) return [this.d0];
    const raw = span / n;
    const mag = 10 ** Math.floor(Math.log10(raw));
    const step = [1, 2, 5, 10].map((m) => m * mag).find((s) => span / s <= n) ?? mag * 10;
    const start = Math.ceil(this.d0 / step) * step;
    const out: number[] = [];
    for (let v = start; v <= this.d1 + 1e-9; v += step) out.push(Number(v.toPrecision(12)));
    return out;
  }
}

export class Log10Scale {
  private inner: LinearScale;

  constructor(d0: number, d1: number, r0: number, r1: number) {
    this.inner = new LinearScale(Math.log10(d0), Math.log10(d1), r0, r1);
  }

  map(v: number): number {
    return this.inner.map(Math.log10(v));
  }
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export class Svg {
  private parts: string[] = [];

  constructor(readonly width: number, readonly height: number) {}

  rect(x: number, y: number, w: number, h: number, style: string): void {
    this.parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}" style="${style}"/>`,
    );
  }

  line(x1: number, y1: number, x2: number, y2: number, style: string): void {
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" style="${style}"/>`,
    );
  }

  path(points: Array<[number, number]>, style: string, close = false): void {
    if (points.length === 0) return;
    const d =
      points.map(([x, y], i) => `${i === 0 ? "M" : "L"}${fmt(x)},${fmt(y)}`).join(" ") +
      (close ? " Z" : "");
    this.parts.push(`<path d="${d}" style="${style}"/>`);
  }

  circle(x: number, y: number, r: number, style: string): void {
    this.parts.push(`<circle cx="${fmt(x)}" cy="${fmt(y)}" r="${fmt(r)}" style="${style}"/>`);
  }

  text(x: number, y: number, content: string, style: string, anchor = "middle"): void {
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" text-anchor="${anchor}" style="${style}">${esc(content)}</text>`,
    );
  }

  /** Embed machine-readable data; the tests read the series back from here. */
  metadata(id: string, payload: unknown): void {
    this.parts.push(
      `<metadata id="${id}">${esc(JSON.stringify(payload))}</metadata>`,
    );
  }

  render(): string {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" height="${this.height}" ` +
      `viewBox="0 0 ${this.width} ${this.height}">\n` +
      `<rect width="${this.width}" height="${this.height}" style="fill:white"/>\n` +
      this.parts.join("\n") +
      "\n</svg>\n"
    );
  }
}

function fmt(v: number): string {
  return Number(v.toFixed(3)).toString();
}

export function extractMetadata(svgText: string, id: string): unknown {
  const re = new RegExp(`<metadata id="${id}">([\\s\\S]*?)</metadata>`);
  const m = svgText.match(re);
  if (!m) {
    throw new Error(`no metadata block '${id}' in SVG`);
  }
  const unescaped = m[1].replace(/&lt;/g, "<").replace(/&gt;/g, ">").replace(/&amp;/g, "&");
  return JSON.parse(unescaped);
}

export function drawAxes(
  svg: Svg,
  xs: LinearScale,
  ys: LinearScale,
  xLabel: string,
  yLabel: string,
  title: string,
): void {
  const axisStyle = "stroke:#333;stroke-width:1";
  const tickStyle = "font:10px sans-serif;fill:#333";
  svg.line(xs.r0, ys.r1, xs.r1, ys.r1, axisStyle);
  svg.line(xs.r0, ys.r0, xs.r0, ys.r1, axisStyle);
  for (const t of xs.ticks()) {
    const px = xs.map(t);
    svg.line(px, ys.r1, px, ys.r1 + 4, axisStyle);
    svg.text(px, ys.r1 + 16, String(t), tickStyle);
  }
  for (const t of ys.ticks()) {
    const py = ys.map(t);
    svg.line(xs.r0 - 4, py, xs.r0, py, axisStyle);
    svg.text(xs.r0 - 8, py + 3, String(t), tickStyle, "end");
  }
  svg.text((xs.r0 + xs.r1) / 2, ys.r1 + 34, xLabel, "font:11px sans-serif;fill:#333");
  svg.text(xs.r0 - 40, ys.r0 - 10, yLabel, "font:11px sans-serif;fill:#333", "start");
  if (title) {
    svg.text((xs.r0 + xs.r1) / 2, 18, title, "font:bold 13px sans-serif;fill:#111");
  }
}
