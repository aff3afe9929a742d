import type { GatewayClient } from "./api.js";
import type { SessionState } from "./session.js";

/** Conversation list, newest first, with select and soft-delete. */
export class HistorySidebar {
  readonly list: HTMLElement;
  readonly emptyState: HTMLElement;

  constructor(
    private client: GatewayClient,
    private session: SessionState,
    readonly root: HTMLElement,
    private onSelect: (conversationId: string) => void,
  ) {
    const doc = root.ownerDocument;
    root.classList.add("history-sidebar");
    const heading = doc.createElement("h3");
    heading.textContent = "Conversations";
    this.emptyState = doc.createElement("p");
    this.emptyState.className = "empty-state";
    this.emptyState.textContent = "No conversations yet.";
    this.list = doc.createElement("ul");
    root.append(heading, this.emptyState, this.list);
  }

  async refresh(): Promise<void> {
    const doc = this.root.ownerDocument;
    const conversations = await this.client.listConversations();
    this.list.replaceChildren();
    this.emptyState.hidden = conversations.length > 0;
    for (const summary of conversations) {
      const item = doc.createElement("li");
      item.dataset.id = summary.id;
      const select = doc.createElement("button");
      select.className = "select";
      select.textContent = `${summary.updated_at.slice(0, 16)} · ${summary.turn_count} turns`;
      select.addEventListener("click", () => this.onSelect(summary.id));
      const remove = doc.createElement("button");
      remove.className = "delete";
      remove.textContent = "✕";
      remove.title = "Delete conversation";
      remove.addEventListener("click", () => {
        void this.client.deleteConversation(summary.id).then(() => this.refresh());
      });
      item.append(select, remove);
      this.list.appendChild(item);
    }
  }
}
