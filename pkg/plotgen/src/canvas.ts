/** Minimal retained drawing surface shared by the SVG and PDF writers.
 * Coordinates are top-left origin, y growing downward (SVG convention);
 * the PDF backend flips them.
 */

export type Anchor = "start" | "middle" | "end";

export interface Canvas {
  readonly width: number;
  readonly height: number;
  polyline(points: Array<[number, number]>, color: string, width: number, dash?: string): void;
  rect(x: number, y: number, w: number, h: number, fill: string | null, stroke: string | null): void;
  text(x: number, y: number, s: string, size: number, anchor: Anchor, color?: string, rotate?: number): void;
  toBytes(): Uint8Array;
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export class SvgCanvas implements Canvas {
  private parts: string[] = [];

  constructor(
    readonly width: number,
    readonly height: number,
  ) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
        `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
      `<rect x="0" y="0" width="${width}" height="${height}" fill="white"/>`,
    );
  }

  polyline(points: Array<[number, number]>, color: string, width: number, dash?: string): void {
    if (points.length === 0) return;
    const d = points
      .map(([x, y], i) => `${i === 0 ? "M" : "L"}${round(x)} ${round(y)}`)
      .join("");
    const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<path d="${d}" fill="none" stroke="${color}" stroke-width="${width}"${dashAttr}/>`,
    );
  }

  rect(x: number, y: number, w: number, h: number, fill: string | null, stroke: string | null): void {
    const f = fill ? ` fill="${fill}"` : ` fill="none"`;
    const s = stroke ? ` stroke="${stroke}"` : "";
    this.parts.push(
      `<rect x="${round(x)}" y="${round(y)}" width="${round(w)}" height="${round(h)}"${f}${s}/>`,
    );
  }

  text(x: number, y: number, s: string, size: number, anchor: Anchor, color = "#000", rotate?: number): void {
    const tr = rotate ? ` transform="rotate(${rotate} ${round(x)} ${round(y)})"` : "";
    this.parts.push(
      `<text x="${round(x)}" y="${round(y)}" font-size="${size}" text-anchor="${anchor}" ` +
        `fill="${color}"${tr}>${esc(s)}</text>`,
    );
  }

  toBytes(): Uint8Array {
    return new TextEncoder().encode(this.parts.join("\n") + "\n</svg>\n");
  }
}

function round(v: number): string {
  return String(Math.round(v * 100) / 100);
}
