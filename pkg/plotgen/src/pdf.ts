/** Single-page vector PDF backend for the figure canvas.
 *
 * Writes a self-contained PDF 1.4 document using the built-in Helvetica
 * font, which every reader ships; only the operators needed for line
 * charts are emitted (paths, rects, text). Good enough for documentation
 * embedding without pulling in a PDF dependency tree.
 */

import type { Anchor, Canvas } from "./canvas.js";

function hexToRgb(color: string): [number, number, number] {
  const named: Record<string, string> = { black: "#000000", white: "#ffffff" };
  let c = named[color] ?? color;
  if (c.startsWith("#") && c.length === 4) {
    c = `#${c[1]}${c[1]}${c[2]}${c[2]}${c[3]}${c[3]}`;
  }
  if (!c.startsWith("#") || c.length !== 7) return [0, 0, 0];
  return [
    parseInt(c.slice(1, 3), 16) / 255,
    parseInt(c.slice(3, 5), 16) / 255,
    parseInt(c.slice(5, 7), 16) / 255,
  ];
}

function escText(s: string): string {
  return s.replace(/\\/g, "\\\\").replace(/\(/g, "\\(").replace(/\)/g, "\\)");
}

const HELVETICA_AVG_WIDTH = 0.52; // em fraction, enough for label centering

export class PdfCanvas implements Canvas {
  private ops: string[] = [];

  constructor(
    readonly width: number,
    readonly height: number,
  ) {}

  private flip(y: number): number {
    return this.height - y;
  }

  polyline(points: Array<[number, number]>, color: string, width: number, dash?: string): void {
    if (points.length === 0) return;
    const [r, g, b] = hexToRgb(color);
    this.ops.push(`${r.toFixed(3)} ${g.toFixed(3)} ${b.toFixed(3)} RG`);
    this.ops.push(`${width} w`);
    this.ops.push(dash ? `[${dash.split(",").join(" ")}] 0 d` : "[] 0 d");
    points.forEach(([x, y], i) => {
      this.ops.push(`${fmt(x)} ${fmt(this.flip(y))} ${i === 0 ? "m" : "l"}`);
    });
    this.ops.push("S");
  }

  rect(x: number, y: number, w: number, h: number, fill: string | null, stroke: string | null): void {
    if (fill) {
      const [r, g, b] = hexToRgb(fill);
      this.ops.push(`${r.toFixed(3)} ${g.toFixed(3)} ${b.toFixed(3)} rg`);
      this.ops.push(`${fmt(x)} ${fmt(this.flip(y + h))} ${fmt(w)} ${fmt(h)} re f`);
    }
    if (stroke) {
      const [r, g, b] = hexToRgb(stroke);
      this.ops.push(`${r.toFixed(3)} ${g.toFixed(3)} ${b.toFixed(3)} RG`);
      this.ops.push("1 w [] 0 d");
      this.ops.push(`${fmt(x)} ${fmt(this.flip(y + h))} ${fmt(w)} ${fmt(h)} re S`);
    }
  }

  text(x: number, y: number, s: string, size: number, anchor: Anchor, color = "#000", rotate?: number): void {
    const [r, g, b] = hexToRgb(color);
    const est = s.length * size * HELVETICA_AVG_WIDTH;
    const dx = anchor === "middle" ? -est / 2 : anchor === "end" ? -est : 0;
    const yy = this.flip(y);
    this.ops.push("BT");
    this.ops.push(`${r.toFixed(3)} ${g.toFixed(3)} ${b.toFixed(3)} rg`);
    this.ops.push(`/F1 ${size} Tf`);
    if (rotate) {
      const th = (-rotate * Math.PI) / 180;
      const c = Math.cos(th).toFixed(6);
      const sn = Math.sin(th).toFixed(6);
      // rotate about the anchor point, offsetting along the rotated baseline
      this.ops.push(`${c} ${sn} ${(-Number(sn)).toFixed(6)} ${c} ${fmt(x)} ${fmt(yy)} Tm`);
      this.ops.push(`${fmt(dx)} 0 Td`);
    } else {
      this.ops.push(`1 0 0 1 ${fmt(x + dx)} ${fmt(yy)} Tm`);
    }
    this.ops.push(`(${escText(s)}) Tj`);
    this.ops.push("ET");
  }

  toBytes(): Uint8Array {
    const stream = this.ops.join("\n");
    const objects: string[] = [];
    objects.push("<< /Type /Catalog /Pages 2 0 R >>");
    objects.push("<< /Type /Pages /Kids [3 0 R] /Count 1 >>");
    objects.push(
      `<< /Type /Page /Parent 2 0 R /MediaBox [0 0 ${this.width} ${this.height}] ` +
        "/Resources << /Font << /F1 5 0 R >> >> /Contents 4 0 R >>",
    );
    objects.push(`<< /Length ${stream.length} >>\nstream\n${stream}\nendstream`);
    objects.push("<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>");

    let body = "%PDF-1.4\n";
    const offsets: number[] = [];
    objects.forEach((obj, i) => {
      offsets.push(body.length);
      body += `${i + 1} 0 obj\n${obj}\nendobj\n`;
    });
    const xref = body.length;
    body += `xref\n0 ${objects.length + 1}\n0000000000 65535 f \n`;
    for (const off of offsets) {
      body += `${String(off).padStart(10, "0")} 00000 n \n`;
    }
    body += `trailer\n<< /Size ${objects.length + 1} /Root 1 0 R >>\nstartxref\n${xref}\n%%EOF\n`;
    return new TextEncoder().encode(body);
  }
}

function fmt(v: number): string {
  return String(Math.round(v * 100) / 100);
}
