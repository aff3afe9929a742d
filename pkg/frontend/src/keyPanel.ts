import { escapeHtml } from "./markdown.js";
import type { GatewayClient } from "./api.js";
import type { SessionState } from "./session.js";

/**
 * Show-once API key issuance. The plaintext lives only in the DOM while the
 * reveal is open; dismissing wipes it and nothing is cached client-side.
 * After a reload the key cannot be retrieved again: the panel lists key
 * metadata only, with revoke controls and reissue guidance.
 */
export class KeyPanel {
  readonly issueButton: HTMLButtonElement;
  readonly reveal: HTMLElement;
  readonly keyList: HTMLElement;
  readonly guidance: HTMLElement;

  constructor(
    private client: GatewayClient,
    private session: SessionState,
    readonly root: HTMLElement,
  ) {
    const doc = root.ownerDocument;
    root.classList.add("key-panel");
    const heading = doc.createElement("h3");
    heading.textContent = "API access";

    this.guidance = doc.createElement("p");
    this.guidance.className = "guidance";
    this.guidance.textContent =
      "Keys are shown exactly once. Lost a key? Revoke it and issue a new one.";

    this.issueButton = doc.createElement("button");
    this.issueButton.className = "issue";
    this.issueButton.textContent = "Issue new key";
    this.issueButton.addEventListener("click", () => void this.issue());

    this.reveal = doc.createElement("div");
    this.reveal.className = "reveal";
    this.reveal.hidden = true;

    this.keyList = doc.createElement("ul");
    this.keyList.className = "key-list";

    root.append(heading, this.guidance, this.issueButton, this.reveal, this.keyList);
  }

  async issue(label = "web"): Promise<void> {
    const course = this.session.activeCourse;
    if (!course) return;
    const issued = await this.client.issueKey(course.id, label);
    const doc = this.root.ownerDocument;
    this.reveal.replaceChildren();
    this.reveal.hidden = false;

    const keyField = doc.createElement("code");
    keyField.className = "key-plaintext";
    keyField.textContent = issued.key;

    const snippet = doc.createElement("pre");
    snippet.className = "snippet";
    snippet.innerHTML =
      `<code>curl ${escapeHtml(this.client.baseUrl)}/v1/chat/completions \\\n` +
      `  -H "Authorization: Bearer ${escapeHtml(issued.key)}" \\\n` +
      `  -H "Content-Type: application/json" \\\n` +
      `  -d '{"model":"${escapeHtml(course.allowed_models[0] ?? "")}",` +
      `"messages":[{"role":"user","content":"hi"}]}'</code>`;

    const copy = doc.createElement("button");
    copy.className = "copy";
    copy.textContent = "Copy key";
    copy.addEventListener("click", () => {
      const clipboard = (this.root.ownerDocument.defaultView as any)?.navigator?.clipboard;
      void clipboard?.writeText?.(issued.key);
    });

    const dismiss = doc.createElement("button");
    dismiss.className = "dismiss";
    dismiss.textContent = "I saved it — dismiss";
    dismiss.addEventListener("click", () => this.dismiss());

    const warning = doc.createElement("p");
    warning.textContent = "Save this key now: it will not be shown again.";

    this.reveal.append(warning, keyField, copy, snippet, dismiss);
    await this.refreshList();
  }

  /** Wipe the plaintext from the DOM; only metadata remains reachable. */
  dismiss(): void {
    this.reveal.replaceChildren();
    this.reveal.hidden = true;
  }

  async refreshList(): Promise<void> {
    const course = this.session.activeCourse;
    if (!course) return;
    const doc = this.root.ownerDocument;
    const keys = await this.client.listKeys(course.id);
    this.keyList.replaceChildren();
    for (const key of keys) {
      const item = doc.createElement("li");
      item.dataset.id = key.id;
      const label = doc.createElement("span");
      label.textContent = `${key.label || "unlabeled"} · ${key.created_at.slice(0, 10)}`;
      item.appendChild(label);
      if (key.revoked_at) {
        const revoked = doc.createElement("span");
        revoked.className = "revoked";
        revoked.textContent = " (revoked)";
        item.appendChild(revoked);
      } else {
        const revoke = doc.createElement("button");
        revoke.className = "revoke";
        revoke.textContent = "Revoke";
        revoke.addEventListener("click", () => {
          void this.client.revokeKey(key.id).then(() => this.refreshList());
        });
        item.appendChild(revoke);
      }
      this.keyList.appendChild(item);
    }
  }
}
