import { escapeHtml, renderMarkdown } from "./markdown.js";
import type { GatewayClient } from "./api.js";
import type { SessionState } from "./session.js";

/**
 * The conversational view: transcript with live streaming deltas, a mode
 * badge for the course (pass-through vs RAG), a budget banner for 402s, and
 * an inline retry affordance on stream errors.
 *
 * Each assistant bubble keeps the raw accumulated delta text in
 * `data-raw`; markdown rendering happens from exactly that string, so the
 * rendered transcript always corresponds 1:1 to the received deltas.
 */
export class ChatView {
  readonly transcript: HTMLElement;
  readonly input: HTMLTextAreaElement;
  readonly sendButton: HTMLButtonElement;
  readonly banner: HTMLElement;
  readonly badge: HTMLElement;

  constructor(
    private client: GatewayClient,
    private session: SessionState,
    readonly root: HTMLElement,
  ) {
    const doc = root.ownerDocument;
    root.classList.add("chat-view");

    const header = doc.createElement("div");
    header.className = "chat-header";
    const title = doc.createElement("span");
    title.className = "chat-course-name";
    title.textContent = session.activeCourse?.name ?? "";
    this.badge = doc.createElement("span");
    this.badge.className = "mode-badge";
    this.badge.textContent = session.activeCourse?.mode === "rag" ? "RAG" : "pass-through";
    header.append(title, this.badge);

    this.banner = doc.createElement("div");
    this.banner.className = "budget-banner";
    this.banner.hidden = true;

    this.transcript = doc.createElement("div");
    this.transcript.className = "transcript";

    const controls = doc.createElement("div");
    controls.className = "chat-controls";
    this.input = doc.createElement("textarea");
    this.input.rows = 2;
    this.input.placeholder = "Ask something…";
    this.sendButton = doc.createElement("button");
    this.sendButton.textContent = "Send";
    this.sendButton.addEventListener("click", () => void this.send());
    controls.append(this.input, this.sendButton);

    root.append(header, this.banner, this.transcript, controls);
  }

  private bubble(role: string, raw: string): HTMLElement {
    const doc = this.root.ownerDocument;
    const el = doc.createElement("div");
    el.className = `message ${role}`;
    el.dataset.raw = raw;
    if (role === "assistant") {
      el.innerHTML = renderMarkdown(raw);
    } else {
      el.innerHTML = `<p>${escapeHtml(raw)}</p>`;
    }
    this.transcript.appendChild(el);
    return el;
  }

  /** Restore a persisted conversation into the transcript. */
  async loadConversation(conversationId: string): Promise<void> {
    const conversation = await this.client.getConversation(conversationId);
    this.session.activeConversationId = conversation.id;
    this.transcript.replaceChildren();
    for (const turn of conversation.turns) {
      this.bubble(turn.role, turn.content);
    }
  }

  clear(): void {
    this.session.activeConversationId = null;
    this.transcript.replaceChildren();
    this.banner.hidden = true;
    this.input.disabled = false;
    this.sendButton.disabled = false;
  }

  async send(text?: string): Promise<void> {
    const course = this.session.activeCourse;
    if (!course || this.session.streaming) return;
    const question = (text ?? this.input.value).trim();
    if (!question) return;
    this.input.value = "";
    this.bubble("user", question);

    const live = this.bubble("assistant", "");
    live.classList.add("streaming");
    this.session.streaming = true;
    const model = course.allowed_models[0]!;

    await this.client.chatStream(
      model,
      [{ role: "user", content: question }],
      {
        onDelta: (delta) => {
          live.dataset.raw = (live.dataset.raw ?? "") + delta;
          // plain text while streaming; markdown once the turn is complete
          live.textContent = live.dataset.raw;
        },
        onDone: ({ conversationId }) => {
          live.classList.remove("streaming");
          live.innerHTML = renderMarkdown(live.dataset.raw ?? "");
          if (conversationId) this.session.activeConversationId = conversationId;
          this.session.streaming = false;
        },
        onError: (message, status) => {
          live.classList.remove("streaming");
          this.session.streaming = false;
          if (status === 402) {
            this.banner.textContent =
              "This course's budget is exhausted. Ask your instructor to add funds.";
            this.banner.hidden = false;
            this.input.disabled = true;
            this.sendButton.disabled = true;
            live.remove();
            return;
          }
          live.classList.add("error");
          live.textContent = `Something went wrong: ${message} `;
          const retry = this.root.ownerDocument.createElement("button");
          retry.className = "retry";
          retry.textContent = "Retry";
          retry.addEventListener("click", () => {
            live.remove();
            void this.send(question);
          });
          live.appendChild(retry);
        },
      },
      { conversationId: this.session.activeConversationId },
    );
  }
}
