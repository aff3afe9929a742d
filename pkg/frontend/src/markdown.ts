/**
 * Small sanitizing markdown renderer for assistant replies.
 *
 * Every character is HTML-escaped before any markup is applied, so raw HTML
 * in model output can never reach the DOM. Images are deliberately not
 * rendered: an image reference degrades to its alt text. Links are limited
 * to http(s) targets.
 *
 * Supported: headings, bold, italic, inline code, fenced code blocks,
 * blockquotes, unordered/ordered lists, tables, links.
 */

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function renderInline(escaped: string): string {
  let out = escaped;
  // images first so the link rule below can't turn them into anchors
  out = out.replace(/!\[([^\]]*)\]\(([^)]*)\)/g, "$1");
  out = out.replace(/`([^`]+)`/g, "<code>$1</code>");
  out = out.replace(/\*\*([^*]+)\*\*/g, "<strong>$1</strong>");
  out = out.replace(/\*([^*]+)\*/g, "<em>$1</em>");
  out = out.replace(
    /\[([^\]]+)\]\((https?:[^)\s]+)\)/g,
    '<a href="$2" target="_blank" rel="noopener noreferrer">$1</a>',
  );
  return out;
}

function isTableRow(line: string): boolean {
  const trimmed = line.trim();
  return trimmed.startsWith("|") && trimmed.endsWith("|") && trimmed.length > 1;
}

function splitRow(line: string): string[] {
  return line
    .trim()
    .replace(/^\|/, "")
    .replace(/\|$/, "")
    .split("|")
    .map((cell) => cell.trim());
}

function isAlignmentRow(line: string): boolean {
  return isTableRow(line) && splitRow(line).every((cell) => /^:?-{3,}:?$/.test(cell));
}

export function renderMarkdown(text: string): string {
  const lines = escapeHtml(text).split("\n");
  const html: string[] = [];
  let i = 0;
  while (i < lines.length) {
    const line = lines[i]!;
    if (line.trim() === "") {
      i += 1;
      continue;
    }
    if (line.startsWith("```")) {
      const body: string[] = [];
      i += 1;
      while (i < lines.length && !lines[i]!.startsWith("```")) {
        body.push(lines[i]!);
        i += 1;
      }
      i += 1; // closing fence
      html.push(`<pre><code>${body.join("\n")}</code></pre>`);
      continue;
    }
    const heading = /^(#{1,6})\s+(.*)$/.exec(line);
    if (heading) {
      const level = heading[1]!.length;
      html.push(`<h${level}>${renderInline(heading[2]!)}</h${level}>`);
      i += 1;
      continue;
    }
    if (line.startsWith("&gt;")) {
      const body: string[] = [];
      while (i < lines.length && lines[i]!.startsWith("&gt;")) {
        body.push(lines[i]!.replace(/^&gt;\s?/, ""));
        i += 1;
      }
      html.push(`<blockquote>${body.map(renderInline).join("<br>")}</blockquote>`);
      continue;
    }
    if (/^\s*[-*]\s+/.test(line)) {
      const items: string[] = [];
      while (i < lines.length && /^\s*[-*]\s+/.test(lines[i]!)) {
        items.push(`<li>${renderInline(lines[i]!.replace(/^\s*[-*]\s+/, ""))}</li>`);
        i += 1;
      }
      html.push(`<ul>${items.join("")}</ul>`);
      continue;
    }
    if (/^\s*\d+\.\s+/.test(line)) {
      const items: string[] = [];
      while (i < lines.length && /^\s*\d+\.\s+/.test(lines[i]!)) {
        items.push(`<li>${renderInline(lines[i]!.replace(/^\s*\d+\.\s+/, ""))}</li>`);
        i += 1;
      }
      html.push(`<ol>${items.join("")}</ol>`);
      continue;
    }
    if (isTableRow(line) && i + 1 < lines.length && isAlignmentRow(lines[i + 1]!)) {
      const header = splitRow(line).map((cell) => `<th>${renderInline(cell)}</th>`);
      i += 2;
      const rows: string[] = [];
      while (i < lines.length && isTableRow(lines[i]!)) {
        const cells = splitRow(lines[i]!).map((cell) => `<td>${renderInline(cell)}</td>`);
        rows.push(`<tr>${cells.join("")}</tr>`);
        i += 1;
      }
      html.push(
        `<table><thead><tr>${header.join("")}</tr></thead><tbody>${rows.join("")}</tbody></table>`,
      );
      continue;
    }
    // paragraph: absorb consecutive plain lines
    const body: string[] = [];
    while (
      i < lines.length &&
      lines[i]!.trim() !== "" &&
      !lines[i]!.startsWith("```") &&
      !/^(#{1,6})\s+/.test(lines[i]!) &&
      !lines[i]!.startsWith("&gt;") &&
      !/^\s*[-*]\s+/.test(lines[i]!) &&
      !/^\s*\d+\.\s+/.test(lines[i]!) &&
      !isTableRow(lines[i]!)
    ) {
      body.push(lines[i]!);
      i += 1;
    }
    html.push(`<p>${body.map(renderInline).join("<br>")}</p>`);
  }
  return html.join("\n");
}
