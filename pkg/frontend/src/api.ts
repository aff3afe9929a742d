import { sseData } from "./sse.js";
import type { SessionState } from "./session.js";
import type {
  Budget,
  ChatUsage,
  Conversation,
  ConversationSummary,
  CourseInfo,
  IssuedKey,
  KeyInfo,
  Member,
  StreamHandlers,
  TurnMessage,
  UsageReport,
  User,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public code?: string,
  ) {
    super(message);
  }
}

async function toApiError(response: Response): Promise<ApiError> {
  let message = `request failed with ${response.status}`;
  let code: string | undefined;
  try {
    const body = await response.json();
    message = body?.error?.message ?? message;
    code = body?.error?.code;
  } catch {
    // non-JSON error body; keep the status message
  }
  return new ApiError(response.status, message, code);
}

/**
 * Typed client over the gateway's public REST/SSE surface. Session-token
 * requests carry the active course in X-Course-Id; nothing here talks to
 * anything but the documented endpoints.
 */
export class GatewayClient {
  constructor(
    public baseUrl: string,
    public session: SessionState,
  ) {}

  private headers(json = true): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.session.token) headers["Authorization"] = `Bearer ${this.session.token}`;
    if (this.session.activeCourse) headers["X-Course-Id"] = this.session.activeCourse.id;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: this.headers(body !== undefined),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) throw await toApiError(response);
    return (await response.json()) as T;
  }

  async login(assertion: string): Promise<User> {
    const result = await this.request<{ session_token: string; user: User }>(
      "POST",
      "/auth/login",
      { assertion },
    );
    this.session.token = result.session_token;
    this.session.user = result.user;
    return result.user;
  }

  async myCourses(): Promise<CourseInfo[]> {
    const result = await this.request<{ data: CourseInfo[] }>("GET", "/v1/courses");
    return result.data;
  }

  async listModels(): Promise<string[]> {
    const result = await this.request<{ data: { id: string }[] }>("GET", "/v1/models");
    return result.data.map((m) => m.id);
  }

  async listConversations(): Promise<ConversationSummary[]> {
    const result = await this.request<{ data: ConversationSummary[] }>(
      "GET",
      "/v1/conversations",
    );
    return result.data;
  }

  async getConversation(id: string): Promise<Conversation> {
    return this.request<Conversation>("GET", `/v1/conversations/${id}`);
  }

  async deleteConversation(id: string): Promise<void> {
    await this.request("DELETE", `/v1/conversations/${id}`);
  }

  async getBudget(courseId: string): Promise<Budget> {
    return this.request<Budget>("GET", `/admin/courses/${courseId}/budget`);
  }

  async listMembers(courseId: string): Promise<Member[]> {
    const result = await this.request<{ data: Member[] }>(
      "GET",
      `/admin/courses/${courseId}/members`,
    );
    return result.data;
  }

  async usage(from: string, to: string, courseId: string): Promise<UsageReport> {
    const params = new URLSearchParams({ from, to, course_id: courseId });
    return this.request<UsageReport>("GET", `/admin/usage?${params.toString()}`);
  }

  async issueKey(courseId: string, label: string): Promise<IssuedKey> {
    return this.request<IssuedKey>("POST", `/admin/courses/${courseId}/keys`, { label });
  }

  async listKeys(courseId: string): Promise<KeyInfo[]> {
    const result = await this.request<{ data: KeyInfo[] }>(
      "GET",
      `/admin/courses/${courseId}/keys`,
    );
    return result.data;
  }

  async revokeKey(keyId: string): Promise<void> {
    await this.request("DELETE", `/admin/keys/${keyId}`);
  }

  /**
   * Stream a chat turn. Deltas are handed to onDelta in arrival order;
   * onDone fires after the terminal chunk with usage and the (possibly
   * fresh) conversation id.
   */
  async chatStream(
    model: string,
    messages: TurnMessage[],
    handlers: StreamHandlers,
    options: { conversationId?: string | null; maxTokens?: number } = {},
  ): Promise<void> {
    const body: Record<string, unknown> = { model, messages, stream: true };
    if (options.conversationId) body.conversation_id = options.conversationId;
    if (options.maxTokens) body.max_tokens = options.maxTokens;
    let response: Response;
    try {
      response = await fetch(this.baseUrl + "/v1/chat/completions", {
        method: "POST",
        headers: this.headers(),
        body: JSON.stringify(body),
      });
    } catch (err) {
      handlers.onError(err instanceof Error ? err.message : String(err));
      return;
    }
    if (!response.ok) {
      const error = await toApiError(response);
      handlers.onError(error.message, error.status);
      return;
    }
    if (!response.body) {
      handlers.onError("response had no body");
      return;
    }
    let usage: ChatUsage | undefined;
    let finishReason: string | undefined;
    let conversationId: string | undefined;
    try {
      for await (const data of sseData(response.body)) {
        if (data === "[DONE]") break;
        let chunk: any;
        try {
          chunk = JSON.parse(data);
        } catch {
          continue;
        }
        if (chunk.error) {
          handlers.onError(chunk.error.message ?? "stream error");
          return;
        }
        const choice = chunk.choices?.[0];
        if (choice?.delta?.content) handlers.onDelta(choice.delta.content);
        if (choice?.finish_reason) finishReason = choice.finish_reason;
        if (chunk.usage) usage = chunk.usage;
        if (chunk.conversation_id) conversationId = chunk.conversation_id;
      }
    } catch (err) {
      handlers.onError(err instanceof Error ? err.message : String(err));
      return;
    }
    handlers.onDone({ usage, finishReason, conversationId });
  }
}
