export interface User {
  id: string;
  external_subject: string;
  display_name: string;
  email: string;
}

export interface CourseInfo {
  id: string;
  name: string;
  mode: "pass_through" | "rag";
  role: string;
  allowed_models: string[];
}

export interface TurnMessage {
  role: "system" | "user" | "assistant";
  content: string;
  timestamp?: string;
}

export interface ConversationSummary {
  id: string;
  course_id: string;
  mode: string;
  created_at: string;
  updated_at: string;
  turn_count: number;
}

export interface Conversation {
  id: string;
  user_id: string;
  course_id: string;
  mode: string;
  turns: TurnMessage[];
  created_at: string;
  updated_at: string;
}

export interface Budget {
  course_id: string;
  limit_microcredits: number;
  spent_microcredits: number;
  reserved_microcredits: number;
}

export interface Member {
  user_id: string;
  role: string;
  display_name: string;
  email: string;
}

export interface UsageReport {
  period: { from: string; to: string };
  tokens: Record<string, Record<string, number>>;
  api_calls: Record<string, number>;
  display: Record<string, Record<string, string>>;
}

export interface IssuedKey {
  id: string;
  key: string;
  user_id: string;
  course_id: string;
  label: string;
  created_at: string;
}

export interface KeyInfo {
  id: string;
  user_id: string;
  course_id: string;
  label: string;
  created_at: string;
  revoked_at: string | null;
}

export interface ChatUsage {
  prompt_tokens: number;
  completion_tokens: number;
  total_tokens: number;
}

export interface StreamHandlers {
  onDelta(text: string): void;
  onDone(info: { usage?: ChatUsage; finishReason?: string; conversationId?: string }): void;
  onError(message: string, status?: number): void;
}
